//! Subtle-detail enhancement and semantic refinement for fine-grained
//! recognition, on a small CPU tensor library with reverse-mode autodiff.

pub mod autodiff;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod layer;
pub mod network;
pub mod ops;
pub mod reassembly;
pub mod sde;
pub mod ssr;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Shape, Tensor};
