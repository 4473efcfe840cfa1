//! Central finite-difference validation of the tape's gradient rules.

use crate::error::Result;
use crate::tensor::Tensor;

use super::tape::{OpKind, Tape, Var};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Knobs for [`gradcheck_with`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements_per_input: Option<usize>,
    /// Corrupt one backward rule (negative control).
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: DEFAULT_EPSILON,
            max_elements_per_input: None,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_relative_error: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub elements_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences with step `epsilon`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    gradcheck_with(
        f,
        inputs,
        GradCheckOptions {
            epsilon,
            ..GradCheckOptions::default()
        },
    )
}

pub fn gradcheck_with<F>(f: F, inputs: &[Tensor<f64>], options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(options.fault);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?.collect(&vars)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_input: 0,
        worst_element: 0,
        analytic: 0.0,
        numeric: 0.0,
        elements_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let step = match options.max_elements_per_input {
            Some(m) if m > 0 && numel > m => numel.div_ceil(m),
            _ => 1,
        };
        for j in (0..numel).step_by(step) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + options.epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - options.epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * options.epsilon);
            let analytic = grads[i].data()[j];
            let err = relative_error(analytic, numeric);
            report.elements_checked += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_input = i;
                report.worst_element = j;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
