//! Subtle detail extractor.
//!
//! A 3x3 encoder predicts a k_h x k_h kernel at every position, the
//! softmax-normalized kernels smooth the input, and the residual
//! `input - smooth` is added back:
//!
//! ```text
//! logits   = conv3x3(f)
//! smooth   = reassemble(f, softmax(logits))
//! enhanced = f + (f - smooth)        computed as 2f - smooth
//! ```

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::layer::ConvVars;
use crate::ops::{ConvGeometry, ConvParams};
use crate::reassembly::KernelField;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_HIGH_PASS_WINDOW: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SdeParams<T> {
    /// `C' -> k_h^2`, 3x3, padding 1.
    pub encoder: ConvParams<T>,
    pub k_h: usize,
}

impl<T: Scalar> SdeParams<T> {
    pub fn new(encoder: ConvParams<T>, k_h: usize) -> Result<Self> {
        if k_h % 2 == 0 {
            return Err(Error::invalid("sde", format!("high-pass window {k_h} is not odd")));
        }
        ensure_dim("sde", "encoder output channels", k_h * k_h, encoder.out_channels())?;
        Ok(SdeParams { encoder, k_h })
    }

    /// Fan-in uniform encoder, zero bias: initial kernels are near uniform.
    pub fn init<R: Rng>(channels: usize, k_h: usize, rng: &mut R) -> Self {
        SdeParams {
            encoder: ConvParams::init(k_h * k_h, channels, 3, ConvGeometry::same(3), 1.0, rng),
            k_h,
        }
    }
}

/// Tape nodes produced by one SDE application.
#[derive(Clone, Copy, Debug)]
pub struct SdeNodes {
    pub logits: Var,
    pub kernels: Var,
    pub smooth: Var,
    pub enhanced: Var,
}

/// Records the SDE on `tape` with an encoder already bound to it.
pub fn sde_forward_tape<T: Scalar>(tape: &mut Tape<T>, f_prime: Var, encoder: &ConvVars) -> Result<SdeNodes> {
    let in_ch = tape.shape(encoder.weight).c;
    ensure_dim("sde", "input channels", in_ch, tape.shape(f_prime).c)?;
    let logits = encoder.apply(tape, f_prime)?;
    let kernels = tape.softmax_per_position(logits)?;
    let smooth = tape.reassemble(f_prime, kernels)?;
    let doubled = tape.scale(f_prime, T::lit(2.0));
    let enhanced = tape.sub(doubled, smooth)?;
    Ok(SdeNodes {
        logits,
        kernels,
        smooth,
        enhanced,
    })
}

/// Every intermediate of one SDE application.
#[derive(Clone, Debug)]
pub struct SdeOutput<T> {
    pub kernels: KernelField<T>,
    pub smooth: Tensor<T>,
    pub detail: Tensor<T>,
    pub enhanced: Tensor<T>,
}

pub fn sde_decompose<T: Scalar>(f_prime: &Tensor<T>, params: &SdeParams<T>) -> Result<SdeOutput<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(f_prime.clone());
    let enc = ConvVars::constant(&mut tape, &params.encoder);
    let nodes = sde_forward_tape(&mut tape, x, &enc)?;
    let smooth = tape.value(nodes.smooth).clone();
    Ok(SdeOutput {
        kernels: KernelField::normalized(tape.value(nodes.kernels).clone())?,
        detail: f_prime.sub(&smooth)?,
        enhanced: tape.value(nodes.enhanced).clone(),
        smooth,
    })
}

/// Enhanced features `2 f - smooth`.
pub fn sde_forward<T: Scalar>(f_prime: &Tensor<T>, params: &SdeParams<T>) -> Result<Tensor<T>> {
    Ok(sde_decompose(f_prime, params)?.enhanced)
}
