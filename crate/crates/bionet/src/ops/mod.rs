//! Numeric kernels: forward and backward implementations for every
//! operation the tape records.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
pub use elementwise::{
    add, concat_channels, concat_channels_backward, relu, relu_backward, sigmoid, slice_channels,
};
pub use loss::{mse, mse_backward, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use norm::{
    batch_stats, batchnorm2d_backward_eval, batchnorm2d_backward_train, batchnorm2d_eval,
    batchnorm2d_train, update_running, BatchNormOut,
};
pub use pool::{maxpool2d, maxpool2d_backward};
