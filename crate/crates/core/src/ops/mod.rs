//! Pure numeric primitives and their adjoints.
//!
//! Every function here is deterministic: identical inputs give
//! bit-identical outputs.

mod conv;
mod elementwise;
mod linear;
mod rearrange;
mod resample;
mod softmax;

pub use conv::{conv2d, conv2d_backward, conv2d_output_shape, conv2d_with, ConvGeometry, ConvParams};
pub use elementwise::{
    hardswish, hardswish_grad_scalar, hardswish_scalar, mul_broadcast_channels,
    mul_broadcast_channels_backward, relu, relu_grad_scalar, relu_scalar, sigmoid, sigmoid_scalar,
};
pub use linear::{fully_connected, fully_connected_backward};
pub use rearrange::{
    concat_channels, pixel_shuffle, pixel_unshuffle, split_channels, unfold_neighborhood,
    unfold_neighborhood_backward,
};
pub use resample::{
    avg_pool_to, avg_pool_to_backward, global_avg_pool, nearest_upsample, nearest_upsample_backward,
};
pub use softmax::{softmax_per_position, softmax_per_position_backward, square_root_exact};
