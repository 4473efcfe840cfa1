//! Salient semantic refiner.
//!
//! Upsamples the next (half-resolution) stage under guidance from the
//! SDE-enhanced current stage:
//!
//! 1. low-pass mask `conv(f_lo)` with `k_l^2 * 4` channels, pixel-shuffled
//!    to `k_l^2` channels at full resolution;
//! 2. guidance mask `conv(enhanced_hi)`, softmax-normalized;
//! 3. cross mask: the guidance kernels reassemble the upsampled low-pass mask;
//! 4. fused mask = guidance + cross, softmax-normalized;
//! 5. the fused kernels reassemble the nearest-upsampled `f_lo`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::layer::ConvVars;
use crate::ops::{ConvGeometry, ConvParams};
use crate::tensor::{Scalar, Tensor};

/// Resolution ratio between adjacent stages.
pub const SCALE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SsrParams<T> {
    /// `C' -> k_l^2 * s^2`, 3x3, padding 1, applied to the low-resolution map.
    pub lp_encoder: ConvParams<T>,
    /// `C' -> k_l^2`, 3x3, padding 1, applied to the enhanced map.
    pub guide_encoder: ConvParams<T>,
    pub k_l: usize,
}

impl<T: Scalar> SsrParams<T> {
    pub fn new(lp_encoder: ConvParams<T>, guide_encoder: ConvParams<T>, k_l: usize) -> Result<Self> {
        if k_l % 2 == 0 {
            return Err(Error::invalid("ssr", format!("low-pass window {k_l} is not odd")));
        }
        ensure_dim("ssr", "lp encoder output channels", k_l * k_l * SCALE * SCALE, lp_encoder.out_channels())?;
        ensure_dim("ssr", "guide encoder output channels", k_l * k_l, guide_encoder.out_channels())?;
        Ok(SsrParams {
            lp_encoder,
            guide_encoder,
            k_l,
        })
    }

    pub fn init<R: Rng>(channels: usize, k_l: usize, rng: &mut R) -> Self {
        let g = ConvGeometry::same(3);
        SsrParams {
            lp_encoder: ConvParams::init(k_l * k_l * SCALE * SCALE, channels, 3, g, 1.0, rng),
            guide_encoder: ConvParams::init(k_l * k_l, channels, 3, g, 1.0, rng),
            k_l,
        }
    }
}

/// Encoders bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct SsrVars {
    pub lp_encoder: ConvVars,
    pub guide_encoder: ConvVars,
}

impl SsrVars {
    pub fn constant<T: Scalar>(tape: &mut Tape<T>, p: &SsrParams<T>) -> Self {
        SsrVars {
            lp_encoder: ConvVars::constant(tape, &p.lp_encoder),
            guide_encoder: ConvVars::constant(tape, &p.guide_encoder),
        }
    }

    pub fn input<T: Scalar>(tape: &mut Tape<T>, p: &SsrParams<T>) -> Self {
        SsrVars {
            lp_encoder: ConvVars::input(tape, &p.lp_encoder),
            guide_encoder: ConvVars::input(tape, &p.guide_encoder),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SsrNodes {
    pub lp_mask: Var,
    pub lp_mask_up: Var,
    pub guide_mask: Var,
    pub guide_kernels: Var,
    pub cross_mask: Var,
    pub fused_mask: Var,
    pub fused_kernels: Var,
    pub lo_upsampled: Var,
    pub refined: Var,
}

fn check_shapes<T: Scalar>(tape: &Tape<T>, enhanced_hi: Var, f_lo: Var, vars: &SsrVars) -> Result<usize> {
    let (hi, lo) = (tape.shape(enhanced_hi), tape.shape(f_lo));
    if hi.h % 2 != 0 || hi.w % 2 != 0 {
        return Err(Error::invalid("ssr", format!("high-resolution dims {}x{} must be even", hi.h, hi.w)));
    }
    ensure_dim("ssr", "low-resolution height", hi.h / SCALE, lo.h)?;
    ensure_dim("ssr", "low-resolution width", hi.w / SCALE, lo.w)?;
    ensure_dim("ssr", "batch", hi.n, lo.n)?;
    ensure_dim("ssr", "low-resolution channels", hi.c, lo.c)?;
    ensure_dim("ssr", "guide encoder input channels", tape.shape(vars.guide_encoder.weight).c, hi.c)?;
    ensure_dim("ssr", "lp encoder input channels", tape.shape(vars.lp_encoder.weight).c, lo.c)?;
    let taps = tape.shape(vars.guide_encoder.weight).n;
    ensure_dim("ssr", "lp encoder output channels", taps * SCALE * SCALE, tape.shape(vars.lp_encoder.weight).n)?;
    Ok(taps)
}

pub fn ssr_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    enhanced_hi: Var,
    f_lo: Var,
    vars: &SsrVars,
) -> Result<SsrNodes> {
    check_shapes(tape, enhanced_hi, f_lo, vars)?;
    let lp_mask = vars.lp_encoder.apply(tape, f_lo)?;
    let lp_mask_up = tape.pixel_shuffle(lp_mask, SCALE)?;
    let guide_mask = vars.guide_encoder.apply(tape, enhanced_hi)?;
    let guide_kernels = tape.softmax_per_position(guide_mask)?;
    let cross_mask = tape.reassemble(lp_mask_up, guide_kernels)?;
    let fused_mask = tape.add(guide_mask, cross_mask)?;
    let fused_kernels = tape.softmax_per_position(fused_mask)?;
    let lo_upsampled = tape.nearest_upsample(f_lo, SCALE)?;
    let refined = tape.reassemble(lo_upsampled, fused_kernels)?;
    Ok(SsrNodes {
        lp_mask,
        lp_mask_up,
        guide_mask,
        guide_kernels,
        cross_mask,
        fused_mask,
        fused_kernels,
        lo_upsampled,
        refined,
    })
}

/// Refined high-resolution features `(n, C', h, w)`.
pub fn ssr_forward<T: Scalar>(enhanced_hi: &Tensor<T>, f_lo: &Tensor<T>, params: &SsrParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let hi = tape.constant(enhanced_hi.clone());
    let lo = tape.constant(f_lo.clone());
    let vars = SsrVars::constant(&mut tape, params);
    let nodes = ssr_forward_tape(&mut tape, hi, lo, &vars)?;
    Ok(tape.value(nodes.refined).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::nearest_upsample;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delta_guidance(c: usize, k_l: usize) -> SsrParams<f64> {
        let mut p = SsrParams::init(c, k_l, &mut ChaCha8Rng::seed_from_u64(0));
        p.lp_encoder.weight = Tensor::zeros(p.lp_encoder.weight.shape());
        p.lp_encoder.bias = Tensor::zeros(p.lp_encoder.bias.shape());
        p.guide_encoder.weight = Tensor::zeros(p.guide_encoder.weight.shape());
        p.guide_encoder.bias.data_mut()[(k_l / 2) * k_l + k_l / 2] = 1000.0;
        p
    }

    #[test]
    fn delta_guidance_reduces_to_nearest_upsampling() {
        let lo = Tensor::from_fn(Shape::new(2, 3, 3, 4), |n, c, y, x| (n * 7 + c * 3 + y) as f64 - 0.25 * x as f64);
        let hi = Tensor::from_fn(Shape::new(2, 3, 6, 8), |_, c, y, x| (c + y * x) as f64 * 0.1);
        for k in [3, 5] {
            let out = ssr_forward(&hi, &lo, &delta_guidance(3, k)).unwrap();
            assert_eq!(out, nearest_upsample(&lo, 2).unwrap());
        }
    }

    #[test]
    fn constant_low_resolution_is_preserved_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = SsrParams::<f64>::init(2, 3, &mut rng);
        let lo = Tensor::full(Shape::new(1, 2, 4, 4), -1.5);
        let hi = Tensor::from_fn(Shape::new(1, 2, 8, 8), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let out = ssr_forward(&hi, &lo, &params).unwrap();
        assert_eq!(out.shape(), hi.shape());
        for y in 1..7 {
            for x in 1..7 {
                assert!((out.get(0, 1, y, x) + 1.5).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn resolution_errors() {
        let params = SsrParams::<f32>::init(2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let odd = Tensor::zeros(Shape::new(1, 2, 5, 6));
        let lo = Tensor::zeros(Shape::new(1, 2, 2, 3));
        assert!(ssr_forward(&odd, &lo, &params).is_err());
        let hi = Tensor::zeros(Shape::new(1, 2, 8, 8));
        assert!(ssr_forward(&hi, &Tensor::zeros(Shape::new(1, 2, 2, 2)), &params).is_err());
        assert!(ssr_forward(&hi, &Tensor::zeros(Shape::new(1, 3, 4, 4)), &params).is_err());
        assert!(SsrParams::new(params.lp_encoder.clone(), params.lp_encoder.clone(), 3).is_err());
    }
}
