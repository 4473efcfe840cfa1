use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::container::{Container, IntoAny};
use crate::error::{ensure_dim, Error, Result};
use crate::layer::{ConvSlot, ConvVars, ParamStore};
use crate::ops::{ConvGeometry, ConvParams};
use crate::sde::{sde_forward_tape, SdeParams};
use crate::ssr::{ssr_forward_tape, SsrParams, SsrVars};
use crate::tensor::{Scalar, Shape, Tensor};

use super::config::{NetworkConfig, Variant};

/// Subtracted from every pixel before the stem convolution.
pub const INPUT_CENTER: f64 = 0.5;

/// Store slots of every component; `None` where the variant omits it.
#[derive(Clone, Debug, PartialEq)]
struct Slots {
    /// Per stage: stride-2 transition followed by `blocks` 3x3 convs.
    backbone: [Vec<ConvSlot>; 4],
    stem: ConvSlot,
    compress: [Option<ConvSlot>; 4],
    sde: [Option<ConvSlot>; 3],
    ssr: [Option<(ConvSlot, ConvSlot)>; 3],
    fusion: Option<ConvSlot>,
    agfs: Option<(ConvSlot, ConvSlot)>,
    classifier: (usize, usize),
}

/// Parameters and wiring of the full model for one [`Variant`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScopeNetwork<T> {
    config: NetworkConfig,
    store: ParamStore<T>,
    slots: Slots,
}

/// Tape nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub stages: [Var; 4],
    pub compressed: [Var; 4],
    pub enhanced: Vec<Var>,
    pub refined: Vec<Var>,
    pub aggregated: Var,
    pub attention: Option<Var>,
    pub final_features: Var,
    pub logits: Var,
}

/// Attention branch weights: `C' -> C'/2 -> 1`, both 1x1.
#[derive(Clone, Debug, PartialEq)]
pub struct AgfsParams<T> {
    pub reduce: ConvParams<T>,
    pub expand: ConvParams<T>,
}

pub fn agfs_tape<T: Scalar>(
    tape: &mut Tape<T>,
    aggregated: Var,
    deepest: Var,
    reduce: &ConvVars,
    expand: &ConvVars,
) -> Result<(Var, Var)> {
    let (a, d) = (tape.shape(aggregated), tape.shape(deepest));
    ensure_dim("agfs", "height", a.h, d.h)?;
    ensure_dim("agfs", "width", a.w, d.w)?;
    let mid = reduce.apply(tape, deepest)?;
    let mid = tape.hardswish(mid);
    let logit = expand.apply(tape, mid)?;
    ensure_dim("agfs", "attention channels", 1, tape.shape(logit).c)?;
    let attention = tape.sigmoid(logit);
    let out = tape.mul_broadcast(aggregated, attention)?;
    Ok((attention, out))
}

/// `F_final = F_agg * sigmoid(conv(hardswish(conv(F4))))`.
pub fn agfs<T: Scalar>(aggregated: &Tensor<T>, deepest: &Tensor<T>, params: &AgfsParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let a = tape.constant(aggregated.clone());
    let d = tape.constant(deepest.clone());
    let r = ConvVars::constant(&mut tape, &params.reduce);
    let e = ConvVars::constant(&mut tape, &params.expand);
    let (_, out) = agfs_tape(&mut tape, a, d, &r, &e)?;
    Ok(tape.value(out).clone())
}

pub fn classify_tape<T: Scalar>(tape: &mut Tape<T>, features: Var, weight: Var, bias: Var) -> Result<Var> {
    let pooled = tape.global_avg_pool(features)?;
    tape.fully_connected(pooled, weight, bias)
}

impl<T: Scalar> ScopeNetwork<T>
where
    Tensor<T>: IntoAny,
{
    /// Randomly initialized network; deterministic in `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relu_gain = 2f64.sqrt();
        let mut store = ParamStore::new();
        let same = ConvGeometry::same(3);
        let down = ConvGeometry::new(2, 1);
        let ch = config.stage_channels;
        let cp = config.c_prime;
        let v = config.variant;

        let stem = store.add_conv(
            "backbone.stem",
            ConvParams::init(ch[0], config.image_channels, 3, down, relu_gain, &mut rng),
        );
        let backbone: [Vec<ConvSlot>; 4] = std::array::from_fn(|i| {
            let in_ch = if i == 0 { ch[0] } else { ch[i - 1] };
            let mut convs = vec![store.add_conv(
                &format!("backbone.stage{}.down", i + 1),
                ConvParams::init(ch[i], in_ch, 3, down, relu_gain, &mut rng),
            )];
            for b in 0..config.blocks_per_stage[i] {
                convs.push(store.add_conv(
                    &format!("backbone.stage{}.block{}", i + 1, b + 1),
                    ConvParams::init(ch[i], ch[i], 3, same, relu_gain, &mut rng),
                ));
            }
            convs
        });
        let pointwise = ConvGeometry::new(1, 0);
        let compress: [Option<ConvSlot>; 4] = std::array::from_fn(|i| {
            (i == 3 || v.uses_sde()).then(|| {
                store.add_conv(
                    &format!("compress{}", i + 1),
                    ConvParams::init(cp, ch[i], 1, pointwise, 1.0, &mut rng),
                )
            })
        });
        let sde: [Option<ConvSlot>; 3] = std::array::from_fn(|i| {
            v.uses_sde().then(|| {
                let p = SdeParams::init(cp, config.k_h, &mut rng);
                store.add_conv(&format!("sde{}.encoder", i + 1), p.encoder)
            })
        });
        let ssr: [Option<(ConvSlot, ConvSlot)>; 3] = std::array::from_fn(|i| {
            v.uses_ssr().then(|| {
                let p = SsrParams::init(cp, config.k_l[i], &mut rng);
                (
                    store.add_conv(&format!("ssr{}.lp_encoder", i + 1), p.lp_encoder),
                    store.add_conv(&format!("ssr{}.guide_encoder", i + 1), p.guide_encoder),
                )
            })
        });
        let fusion = v.fusion_inputs().map(|units| {
            store.add_conv("fusion", ConvParams::init(cp, units * cp, 1, pointwise, 1.0, &mut rng))
        });
        let agfs = v.uses_agfs().then(|| {
            let mid = config.agfs_mid_channels();
            (
                store.add_conv("agfs.reduce", ConvParams::init(mid, cp, 1, pointwise, 1.0, &mut rng)),
                store.add_conv("agfs.expand", ConvParams::init(1, mid, 1, pointwise, 1.0, &mut rng)),
            )
        });
        let head = ConvParams::<T>::init(config.num_classes, cp, 1, pointwise, 1.0, &mut rng);
        let classifier = (
            store.add("classifier.weight", head.weight),
            store.add("classifier.bias", head.bias),
        );

        Ok(ScopeNetwork {
            config,
            store,
            slots: Slots {
                backbone,
                stem,
                compress,
                sde,
                ssr,
                fusion,
                agfs,
                classifier,
            },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn to_container(&self) -> Container {
        self.store.to_container()
    }

    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        self.store.load_container(c)
    }

    pub fn sde_params(&self, stage: usize) -> Option<SdeParams<T>> {
        let slot = (*self.slots.sde.get(stage)?)?;
        Some(SdeParams {
            encoder: self.store.conv(slot),
            k_h: self.config.k_h,
        })
    }

    pub fn ssr_params(&self, stage: usize) -> Option<SsrParams<T>> {
        let (lp, guide) = (*self.slots.ssr.get(stage)?)?;
        Some(SsrParams {
            lp_encoder: self.store.conv(lp),
            guide_encoder: self.store.conv(guide),
            k_l: self.config.k_l[stage],
        })
    }

    pub fn agfs_params(&self) -> Option<AgfsParams<T>> {
        let (r, e) = self.slots.agfs?;
        Some(AgfsParams {
            reduce: self.store.conv(r),
            expand: self.store.conv(e),
        })
    }

    /// Store indices of every parameter belonging to the named component
    /// group (`"sde"`, `"ssr"`, `"agfs"`, `"fusion"`, `"backbone"`, ...).
    pub fn param_indices(&self, prefix: &str) -> Vec<usize> {
        (0..self.store.len())
            .filter(|&i| self.store.name(i).starts_with(prefix))
            .collect()
    }

    fn check_image(&self, shape: Shape) -> Result<()> {
        ensure_dim("backbone", "image channels", self.config.image_channels, shape.c)?;
        let m = NetworkConfig::INPUT_MULTIPLE;
        if shape.h % m != 0 || shape.w % m != 0 {
            return Err(Error::invalid(
                "backbone",
                format!("image {}x{} is not divisible by {m}", shape.h, shape.w),
            ));
        }
        Ok(())
    }

    /// Four stage feature maps at strides 4, 8, 16 and 32.
    pub fn backbone_tape(&self, tape: &mut Tape<T>, bound: &[Var], image: Var) -> Result<[Var; 4]> {
        let shape = tape.shape(image);
        self.check_image(shape)?;
        let mid = tape.constant(Tensor::full(shape, T::lit(INPUT_CENTER)));
        let centred = tape.sub(image, mid)?;
        let mut x = self.slots.stem.vars(bound).apply(tape, centred)?;
        x = tape.relu(x);
        let mut stages = Vec::with_capacity(4);
        for convs in &self.slots.backbone {
            for slot in convs {
                x = slot.vars(bound).apply(tape, x)?;
                x = tape.relu(x);
            }
            stages.push(x);
        }
        Ok([stages[0], stages[1], stages[2], stages[3]])
    }

    /// SDE/SSR cascade and fusion of compressed stage features.
    ///
    /// Branch `i` is `concat(enhanced_i, refined_{i+1})` at stage-`i`
    /// resolution (enhanced only without SSR); every branch is mean-pooled
    /// to stage-4 resolution, concatenated with `F'_4` and fused by a 1x1
    /// convolution.
    pub fn cascade_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        compressed: [Var; 4],
        variant: Variant,
    ) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        let deepest = tape.shape(compressed[3]);
        for i in 0..3 {
            let (hi, lo) = (tape.shape(compressed[i]), tape.shape(compressed[i + 1]));
            ensure_dim("cascade", "channels", self.config.c_prime, hi.c)?;
            ensure_dim("cascade", "stage height", hi.h / 2, lo.h)?;
            ensure_dim("cascade", "stage width", hi.w / 2, lo.w)?;
            if hi.h % 2 != 0 || hi.w % 2 != 0 {
                return Err(Error::invalid("cascade", "stage resolutions must halve exactly"));
            }
        }
        let fusion = self.require(self.slots.fusion, "fusion")?;
        let expected_in = variant.fusion_inputs().unwrap_or(0) * self.config.c_prime;
        ensure_dim("cascade", "fusion input channels", expected_in, tape.shape(bound[fusion.weight]).c)?;

        let mut pooled = Vec::with_capacity(4);
        let mut enhanced = Vec::new();
        let mut refined = Vec::new();
        for i in 0..3 {
            let sde = self.require(self.slots.sde[i], "sde")?;
            let nodes = sde_forward_tape(tape, compressed[i], &sde.vars(bound))?;
            enhanced.push(nodes.enhanced);
            let branch = if variant.uses_ssr() {
                let (lp, guide) = self.require(self.slots.ssr[i], "ssr")?;
                let vars = SsrVars {
                    lp_encoder: lp.vars(bound),
                    guide_encoder: guide.vars(bound),
                };
                let r = ssr_forward_tape(tape, nodes.enhanced, compressed[i + 1], &vars)?.refined;
                refined.push(r);
                tape.concat_channels(&[nodes.enhanced, r])?
            } else {
                nodes.enhanced
            };
            pooled.push(tape.avg_pool_to(branch, deepest.h, deepest.w)?);
        }
        pooled.push(compressed[3]);
        let cat = tape.concat_channels(&pooled)?;
        let aggregated = fusion.vars(bound).apply(tape, cat)?;
        Ok((aggregated, enhanced, refined))
    }

    fn require<S: Copy>(&self, slot: Option<S>, what: &str) -> Result<S> {
        slot.ok_or_else(|| {
            Error::invalid(
                "network",
                format!("component `{what}` is not part of a {} network", self.config.variant),
            )
        })
    }

    /// Full forward pass as `variant`, which must be a subset of the
    /// network's own variant with compatible fusion width.
    pub fn forward_tape(&self, tape: &mut Tape<T>, bound: &[Var], image: Var, variant: Variant) -> Result<ForwardNodes> {
        ensure_dim("network", "bound parameters", self.store.len(), bound.len())?;
        if variant > self.config.variant {
            return Err(Error::invalid(
                "network",
                format!("cannot run a {} network as {variant}", self.config.variant),
            ));
        }
        let stages = self.backbone_tape(tape, bound, image)?;
        let mut compressed = stages;
        for i in 0..4 {
            if i == 3 || variant.uses_sde() {
                compressed[i] = self.require(self.slots.compress[i], "compress")?.vars(bound).apply(tape, stages[i])?;
            }
        }
        let (aggregated, enhanced, refined) = if variant.uses_sde() {
            self.cascade_tape(tape, bound, compressed, variant)?
        } else {
            (compressed[3], Vec::new(), Vec::new())
        };
        let (attention, final_features) = if variant.uses_agfs() {
            let (r, e) = self.require(self.slots.agfs, "agfs")?;
            let (a, f) = agfs_tape(tape, aggregated, compressed[3], &r.vars(bound), &e.vars(bound))?;
            (Some(a), f)
        } else {
            (None, aggregated)
        };
        let (w, b) = self.slots.classifier;
        let logits = classify_tape(tape, final_features, bound[w], bound[b])?;
        Ok(ForwardNodes {
            stages,
            compressed,
            enhanced,
            refined,
            aggregated,
            attention,
            final_features,
            logits,
        })
    }

    /// Inference logits `(n, classes, 1, 1)` for the network's own variant.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_as(image, self.config.variant)
    }

    pub fn forward_as(&self, image: &Tensor<T>, variant: Variant) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind_constant(&mut tape);
        let x = tape.constant(image.clone());
        let nodes = self.forward_tape(&mut tape, &bound, x, variant)?;
        Ok(tape.value(nodes.logits).clone())
    }

    pub fn backbone_forward(&self, image: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
        let mut tape = Tape::new();
        let bound = self.store.bind_constant(&mut tape);
        let x = tape.constant(image.clone());
        let stages = self.backbone_tape(&mut tape, &bound, x)?;
        Ok(stages.map(|v| tape.value(v).clone()))
    }

    /// Aggregated features from four compressed stage maps.
    pub fn cascade(&self, compressed: &[Tensor<T>; 4]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind_constant(&mut tape);
        let vars = compressed.clone().map(|t| tape.constant(t));
        let (agg, _, _) = self.cascade_tape(&mut tape, &bound, vars, self.config.variant)?;
        Ok(tape.value(agg).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> NetworkConfig {
        NetworkConfig {
            variant,
            stage_channels: [4, 6, 8, 8],
            c_prime: 4,
            k_l: [3, 3, 3],
            num_classes: 3,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn stage_geometry_for_64px() {
        let net = ScopeNetwork::<f32>::new(small(Variant::Full), 1).unwrap();
        let img = Tensor::full(Shape::new(2, 3, 64, 64), 0.5);
        let stages = net.backbone_forward(&img).unwrap();
        let dims: Vec<(usize, usize, usize)> = stages.iter().map(|s| (s.shape().c, s.shape().h, s.shape().w)).collect();
        assert_eq!(dims, vec![(4, 16, 16), (6, 8, 8), (8, 4, 4), (8, 2, 2)]);
        assert!(net.backbone_forward(&Tensor::zeros(Shape::new(1, 3, 48, 64))).is_err());
    }

    #[test]
    fn mid_gray_image_gives_zero_features() {
        let net = ScopeNetwork::<f32>::new(small(Variant::Full), 2).unwrap();
        for s in net.backbone_forward(&Tensor::full(Shape::new(1, 3, 32, 32), INPUT_CENTER as f32)).unwrap() {
            assert!(s.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn parameter_counts_increase_across_variants() {
        let counts: Vec<usize> = Variant::ALL
            .iter()
            .map(|&v| ScopeNetwork::<f32>::new(small(v), 0).unwrap().param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }

    #[test]
    fn parameter_names_follow_convention() {
        let net = ScopeNetwork::<f32>::new(small(Variant::Full), 0).unwrap();
        for name in ["sde1.encoder.weight", "sde3.encoder.bias", "ssr2.lp_encoder.weight", "ssr3.guide_encoder.bias"] {
            assert!(net.params().find(name).is_some(), "{name}");
        }
    }

    #[test]
    fn cannot_run_richer_variant_than_built() {
        let net = ScopeNetwork::<f32>::new(small(Variant::Sde), 0).unwrap();
        let img = Tensor::zeros(Shape::new(1, 3, 32, 32));
        assert!(net.forward_as(&img, Variant::Full).is_err());
        assert!(net.forward_as(&img, Variant::Baseline).is_ok());
    }
}
