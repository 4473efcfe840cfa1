mod common;

use rand::Rng;
use scope_core::ops::{conv2d, ConvGeometry};
use scope_core::reassembly::{reassemble, reassemble_tiled, reassemble_vector, KernelField};
use scope_core::sde::{sde_decompose, SdeParams};
use scope_core::ssr::{ssr_forward, SsrParams};
use scope_core::tensor::{Shape, Tensor};

use common::{max_abs_diff, random, rng, to64};

const F32_TOL: f64 = 1e-6;

#[test]
fn conv2d_matches_loop_oracle_f32_and_f64() {
    let mut r = rng(100);
    for _ in 0..120 {
        let n = r.gen_range(1..3);
        let c = r.gen_range(1..4);
        let o = r.gen_range(1..5);
        let k = [1, 3, 5][r.gen_range(0..3)];
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..=k / 2);
        let h = r.gen_range(k..9);
        let w = r.gen_range(k..9);
        let x: Tensor<f32> = random(&mut r, Shape::new(n, c, h, w), -1.0, 1.0);
        let wt: Tensor<f32> = random(&mut r, Shape::new(o, c, k, k), -0.5, 0.5);
        let b: Tensor<f32> = random(&mut r, Shape::new(o, 1, 1, 1), -0.5, 0.5);
        let g = ConvGeometry::new(stride, pad);
        let expect = common::conv2d(&to64(&x), &to64(&wt), to64(&b).data(), stride, pad);
        let got = conv2d(&x, &wt, &b, g).unwrap();
        assert!(max_abs_diff(&got, &expect) <= F32_TOL);
        let got64 = conv2d(&to64(&x), &to64(&wt), &to64(&b), g).unwrap();
        assert!(max_abs_diff(&got64, &expect) <= 1e-12);
    }
}

#[test]
fn conv_examples() {
    // identity 1x1 over channels
    let x = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, x| (c * 4 + y * 2 + x) as f64);
    let w = Tensor::from_fn(Shape::new(3, 3, 1, 1), |o, c, _, _| if o == c { 1.0 } else { 0.0 });
    let out = conv2d(&x, &w, &Tensor::zeros(Shape::new(3, 1, 1, 1)), ConvGeometry::new(1, 0)).unwrap();
    assert_eq!(out, x);
    // all-ones 3x3 on a constant image
    let v = 0.75f32;
    let x = Tensor::full(Shape::new(1, 1, 4, 4), v);
    let out = conv2d(&x, &Tensor::ones(Shape::new(1, 1, 3, 3)), &Tensor::zeros(Shape::new(1, 1, 1, 1)), ConvGeometry::same(3)).unwrap();
    assert_eq!(out.get(0, 0, 1, 2), 9.0 * v);
    assert_eq!(out.get(0, 0, 0, 0), 4.0 * v);
    assert_eq!(out.get(0, 0, 3, 3), 4.0 * v);
}

fn random_kernels(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize, h: usize, w: usize) -> KernelField<f32> {
    let logits: Tensor<f32> = random(r, Shape::new(n, k * k, h, w), -3.0, 3.0);
    KernelField::from_logits(&logits).unwrap()
}

#[test]
fn reassemble_matches_loop_oracle() {
    let mut r = rng(101);
    for i in 0..120 {
        let k = [1, 3, 5, 7][i % 4];
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..5));
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let f: Tensor<f32> = random(&mut r, Shape::new(n, c, h, w), -1.0, 1.0);
        let kf = random_kernels(&mut r, n, k, h, w);
        let expect = common::reassemble(&to64(&f), &to64(kf.tensor()));
        assert!(max_abs_diff(&reassemble(&f, &kf).unwrap(), &expect) <= F32_TOL);
        assert!(max_abs_diff(&reassemble_tiled(&f, &kf).unwrap(), &expect) <= F32_TOL);
    }
}

#[test]
fn reassemble_vector_matches_loop_oracle() {
    let mut r = rng(102);
    for i in 0..120 {
        let k = [3, 5][i % 2];
        let d = [9, 25, 36][r.gen_range(0..3)];
        let (h, w) = (r.gen_range(2..8), r.gen_range(2..8));
        let field: Tensor<f32> = random(&mut r, Shape::new(1, d, h, w), -2.0, 2.0);
        let kf = random_kernels(&mut r, 1, k, h, w);
        let expect = common::reassemble(&to64(&field), &to64(kf.tensor()));
        assert!(max_abs_diff(&reassemble_vector(&field, &kf).unwrap(), &expect) <= F32_TOL);
    }
}

#[test]
fn sde_matches_composed_oracle() {
    let mut r = rng(103);
    for _ in 0..110 {
        let c = r.gen_range(1..5);
        let k_h = [3, 5][r.gen_range(0..2)];
        let (h, w) = (r.gen_range(2..9), r.gen_range(2..9));
        let mut params = SdeParams::<f32>::init(c, k_h, &mut r);
        params.encoder.bias = random(&mut r, params.encoder.bias.shape(), -0.5, 0.5);
        let n = r.gen_range(1..3);
        let f: Tensor<f32> = random(&mut r, Shape::new(n, c, h, w), -1.0, 1.0);
        let out = sde_decompose(&f, &params).unwrap();
        let (smooth, enhanced) = common::sde(&to64(&f), &to64(&params.encoder.weight), to64(&params.encoder.bias).data());
        assert!(max_abs_diff(&out.smooth, &smooth) <= F32_TOL);
        assert!(max_abs_diff(&out.enhanced, &enhanced) <= F32_TOL);
    }
}

#[test]
fn ssr_matches_composed_oracle() {
    let mut r = rng(104);
    for _ in 0..110 {
        let c = r.gen_range(1..4);
        let k_l = [3, 5][r.gen_range(0..2)];
        let (h, w) = (2 * r.gen_range(1..5), 2 * r.gen_range(1..5));
        let mut p = SsrParams::<f32>::init(c, k_l, &mut r);
        p.lp_encoder.bias = random(&mut r, p.lp_encoder.bias.shape(), -0.5, 0.5);
        p.guide_encoder.bias = random(&mut r, p.guide_encoder.bias.shape(), -0.5, 0.5);
        let n = r.gen_range(1..3);
        let hi: Tensor<f32> = random(&mut r, Shape::new(n, c, h, w), -1.0, 1.0);
        let lo: Tensor<f32> = random(&mut r, Shape::new(n, c, h / 2, w / 2), -1.0, 1.0);
        let got = ssr_forward(&hi, &lo, &p).unwrap();
        let expect = common::ssr(
            &to64(&hi),
            &to64(&lo),
            &to64(&p.lp_encoder.weight),
            to64(&p.lp_encoder.bias).data(),
            &to64(&p.guide_encoder.weight),
            to64(&p.guide_encoder.bias).data(),
        );
        assert!(max_abs_diff(&got, &expect) <= F32_TOL);
    }
}
