//! Minimal define-by-run reverse-mode differentiation.

mod gradcheck;
mod tape;

pub use gradcheck::{
    gradcheck, gradcheck_with, relative_error, GradCheckOptions, GradCheckReport, DEFAULT_EPSILON,
};
pub use tape::{Gradients, OpKind, Tape, Var};
