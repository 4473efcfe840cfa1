mod common;

use scope_core::autodiff::Tape;
use scope_core::container::Container;
use scope_core::network::{agfs, AgfsParams, NetworkConfig, ScopeNetwork, Variant};
use scope_core::ops::{ConvGeometry, ConvParams};
use scope_core::tensor::{Shape, Tensor};

use common::{max_abs_diff, random, rng, to64};

fn compact(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        variant,
        stage_channels: [4, 6, 8, 8],
        c_prime: 4,
        k_l: [3, 5, 3],
        num_classes: 5,
        ..NetworkConfig::default()
    }
}

fn set(net: &mut ScopeNetwork<f32>, name: &str, f: impl Fn(usize) -> f32) {
    let i = net.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    for (j, v) in net.params_mut().tensor_mut(i).data_mut().iter_mut().enumerate() {
        *v = f(j);
    }
}

fn param(net: &ScopeNetwork<f32>, name: &str) -> Tensor<f32> {
    net.params().tensor(net.params().find(name).unwrap()).clone()
}

#[test]
fn full_network_on_64px_gives_class_logits_and_stage4_aggregate() {
    let net = ScopeNetwork::<f32>::new(NetworkConfig::default(), 3).unwrap();
    let img: Tensor<f32> = random(&mut rng(1), Shape::new(2, 3, 64, 64), 0.0, 1.0);
    let logits = net.forward(&img).unwrap();
    assert_eq!(logits.shape(), Shape::new(2, 8, 1, 1));
    let mut tape = Tape::new();
    let bound = net.params().bind_constant(&mut tape);
    let x = tape.constant(img);
    let nodes = net.forward_tape(&mut tape, &bound, x, Variant::Full).unwrap();
    assert_eq!(tape.shape(nodes.aggregated), Shape::new(2, 64, 2, 2));
    assert_eq!(tape.shape(nodes.attention.unwrap()), Shape::new(2, 1, 2, 2));
}

#[test]
fn parameter_count_follows_config_arithmetic() {
    let cfg = compact(Variant::Full);
    let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
    let ch = cfg.stage_channels;
    let cp = cfg.c_prime;
    let mut backbone = conv(ch[0], 3, 3);
    for i in 0..4 {
        backbone += conv(ch[i], if i == 0 { ch[0] } else { ch[i - 1] }, 3) + conv(ch[i], ch[i], 3);
    }
    let head = cfg.num_classes * cp + cfg.num_classes;
    let a = backbone + conv(cp, ch[3], 1) + head;
    let compress = (0..3).map(|i| conv(cp, ch[i], 1)).sum::<usize>();
    let sde = 3 * conv(9, cp, 3);
    let b = a + compress + sde + conv(cp, 4 * cp, 1);
    let ssr: usize = cfg.k_l.iter().map(|&k| conv(4 * k * k, cp, 3) + conv(k * k, cp, 3)).sum();
    let c = a + compress + sde + ssr + conv(cp, 7 * cp, 1);
    let d = c + conv(cp / 2, cp, 1) + conv(1, cp / 2, 1);
    let expect = [a, b, c, d];
    for (v, e) in Variant::ALL.into_iter().zip(expect) {
        let cfg = NetworkConfig { variant: v, ..cfg.clone() };
        assert_eq!(ScopeNetwork::<f32>::new(cfg, 0).unwrap().param_count(), e, "{v}");
    }
    assert!(a < b && b < c && c < d);
}

#[test]
fn baseline_never_touches_scope_parameters() {
    let net = ScopeNetwork::<f32>::new(compact(Variant::Full), 4).unwrap();
    let img: Tensor<f32> = random(&mut rng(2), Shape::new(2, 3, 32, 32), 0.0, 1.0);
    let mut tape = Tape::new();
    let bound = net.params().bind(&mut tape);
    let x = tape.constant(img);
    let nodes = net.forward_tape(&mut tape, &bound, x, Variant::Baseline).unwrap();
    let loss = tape.cross_entropy(nodes.logits, &[1, 3]).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (i, (name, _)) in net.params().iter().enumerate() {
        let g = grads.wrt(bound[i]);
        let unused = ["sde", "ssr", "agfs", "fusion", "compress1", "compress2", "compress3"]
            .iter()
            .any(|p| name.starts_with(p));
        if unused {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} received gradient");
        }
    }
    let head = grads.wrt(bound[net.params().find("classifier.weight").unwrap()]);
    assert!(head.max_abs() > 0.0);
}

#[test]
fn saturated_attention_reproduces_variant_c_exactly() {
    let mut net = ScopeNetwork::<f32>::new(compact(Variant::Full), 5).unwrap();
    set(&mut net, "agfs.expand.weight", |_| 0.0);
    set(&mut net, "agfs.expand.bias", |_| 50.0);
    let img: Tensor<f32> = random(&mut rng(3), Shape::new(3, 3, 32, 64), 0.0, 1.0);
    let d = net.forward_as(&img, Variant::Full).unwrap();
    let c = net.forward_as(&img, Variant::SdeSsr).unwrap();
    assert_eq!(d, c);
}

#[test]
fn agfs_saturation_and_composed_oracle() {
    let mut r = rng(4);
    let agg: Tensor<f32> = random(&mut r, Shape::new(2, 6, 3, 4), -1.0, 1.0);
    let deep: Tensor<f32> = random(&mut r, Shape::new(2, 6, 3, 4), -1.0, 1.0);
    let pw = ConvGeometry::new(1, 0);
    let mut params = AgfsParams {
        reduce: ConvParams::init(3, 6, 1, pw, 1.0, &mut r),
        expand: ConvParams::init(1, 3, 1, pw, 1.0, &mut r),
    };
    params.reduce.bias = random(&mut r, Shape::new(3, 1, 1, 1), -0.5, 0.5);

    let oracle = {
        let mid = common::conv2d(&to64(&deep), &to64(&params.reduce.weight), to64(&params.reduce.bias).data(), 1, 0);
        let mid = mid.map(|x| x * (x + 3.0).clamp(0.0, 6.0) / 6.0);
        let logit = common::conv2d(&mid, &to64(&params.expand.weight), to64(&params.expand.bias).data(), 1, 0);
        let a = logit.map(|x| 1.0 / (1.0 + (-x).exp()));
        Tensor::from_fn(agg.shape(), |n, c, y, x| agg.get(n, c, y, x) as f64 * a.get(n, 0, y, x))
    };
    assert!(max_abs_diff(&agfs(&agg, &deep, &params).unwrap(), &oracle) <= 1e-6);

    params.expand.weight = Tensor::zeros(params.expand.weight.shape());
    params.expand.bias = Tensor::full(params.expand.bias.shape(), 50.0);
    assert_eq!(agfs(&agg, &deep, &params).unwrap(), agg);
    params.expand.bias = Tensor::full(params.expand.bias.shape(), -50.0);
    assert!(agfs(&agg, &deep, &params).unwrap().max_abs() <= 1e-20);

    let wrong: Tensor<f32> = Tensor::zeros(Shape::new(2, 6, 2, 4));
    assert!(agfs(&agg, &wrong, &params).is_err());
}

#[test]
fn delta_guided_cascade_matches_composed_oracle() {
    let mut net = ScopeNetwork::<f32>::new(compact(Variant::SdeSsr), 6).unwrap();
    for i in 1..=3 {
        for part in ["lp_encoder.weight", "lp_encoder.bias", "guide_encoder.weight"] {
            set(&mut net, &format!("ssr{i}.{part}"), |_| 0.0);
        }
        let k = net.config().k_l[i - 1];
        let centre = (k / 2) * k + k / 2;
        set(&mut net, &format!("ssr{i}.guide_encoder.bias"), |j| if j == centre { 1000.0 } else { 0.0 });
    }
    let mut r = rng(7);
    let dims = [(16, 16), (8, 8), (4, 4), (2, 2)];
    let compressed: [Tensor<f32>; 4] = std::array::from_fn(|i| random(&mut r, Shape::new(2, 4, dims[i].0, dims[i].1), -1.0, 1.0));
    let got = net.cascade(&compressed).unwrap();

    let mut parts = Vec::new();
    for i in 0..3 {
        let f = to64(&compressed[i]);
        let w = to64(&param(&net, &format!("sde{}.encoder.weight", i + 1)));
        let b = to64(&param(&net, &format!("sde{}.encoder.bias", i + 1)));
        let (_, enhanced) = common::sde(&f, &w, b.data());
        let refined = common::nearest_upsample(&to64(&compressed[i + 1]), 2);
        parts.push(common::avg_pool_to(&common::concat(&[&enhanced, &refined]), 2, 2));
    }
    parts.push(to64(&compressed[3]));
    let refs: Vec<&Tensor<f64>> = parts.iter().collect();
    let cat = common::concat(&refs);
    let expect = common::conv2d(&cat, &to64(&param(&net, "fusion.weight")), to64(&param(&net, "fusion.bias")).data(), 1, 0);
    assert_eq!(got.shape(), Shape::new(2, 4, 2, 2));
    assert!(max_abs_diff(&got, &expect) <= 1e-6);
}

#[test]
fn constant_stage_features_stay_finite() {
    let net = ScopeNetwork::<f32>::new(compact(Variant::Full), 8).unwrap();
    let compressed: [Tensor<f32>; 4] =
        std::array::from_fn(|i| Tensor::full(Shape::new(1, 4, 16 >> i, 16 >> i), 0.3));
    let agg = net.cascade(&compressed).unwrap();
    assert!(agg.is_finite());
    let broken: [Tensor<f32>; 4] = std::array::from_fn(|i| Tensor::full(Shape::new(1, 4, 16 >> i.min(2), 16 >> i.min(2)), 0.3));
    assert!(net.cascade(&broken).is_err());
}

#[test]
fn forward_is_bit_reproducible_and_checkpoint_round_trips() {
    let net = ScopeNetwork::<f32>::new(compact(Variant::Full), 9).unwrap();
    let img: Tensor<f32> = random(&mut rng(5), Shape::new(2, 3, 32, 32), 0.0, 1.0);
    let a = net.forward(&img).unwrap();
    assert_eq!(a, net.forward(&img).unwrap());

    let bytes = net.to_container().to_bytes();
    let mut other = ScopeNetwork::<f32>::new(compact(Variant::Full), 10).unwrap();
    assert_ne!(other.forward(&img).unwrap(), a);
    other.load_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(other.forward(&img).unwrap(), a);

    let mut smaller = ScopeNetwork::<f32>::new(compact(Variant::Sde), 0).unwrap();
    assert!(smaller.load_container(&Container::from_bytes(&bytes).unwrap()).is_err());
}

#[test]
fn unknown_variant_is_rejected() {
    assert!("e".parse::<Variant>().is_err());
    assert_eq!("sde+ssr".parse::<Variant>().unwrap(), Variant::SdeSsr);
}
