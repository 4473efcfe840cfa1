//! Model assembly: toy pyramid backbone, channel compression, the SDE/SSR
//! cascade, fusion, attention gate and classifier.

mod config;
mod model;

pub use config::{NetworkConfig, Variant};
pub use model::{agfs, agfs_tape, classify_tape, AgfsParams, ForwardNodes, ScopeNetwork};
