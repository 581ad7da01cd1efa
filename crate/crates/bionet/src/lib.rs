//! A recurrent bi-directional encoder-decoder (BiO-Net) for dense
//! prediction, built on a small tape-based autodiff core.
//!
//! The network is U-shaped with paired skip connections: forward skips
//! carry encoder features into the decoder at each resolution, and
//! backward skips carry decoder features back into the encoder, closing an
//! O-shaped loop that is unrolled a configurable number of iterations with
//! shared convolution weights. The crate provides:
//!
//! - [`tensor`], [`ops`], [`tape`], [`params`]: rank-4 `f32` tensors,
//!   forward/backward kernels, and reverse-mode autodiff.
//! - [`net`]: the configurable graph builder, parameter accounting,
//!   and checkpointing.
//! - [`opt`], [`train`], [`augment`]: Adam with inverse-time learning-rate
//!   decay, the training loop, and affine data augmentation.
//! - [`data`], [`metrics`]: manifest-driven dataset loading, synthetic
//!   data, and evaluation metrics.
//!
//! Kernels parallelize over independent output planes when the `parallel`
//! feature (on by default) is enabled; [`parallel::set_parallel`] switches
//! to sequential execution at runtime. Both modes produce bit-identical
//! results.

pub mod augment;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod opt;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{BioNet, BioNetConfig, ConvOrder, Fusion, Head, Phase};
pub use parallel::{parallel_enabled, set_parallel};
pub use params::{BufferId, Buffers, ParamId, ParamKind, Parameter, Params};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{Shape, Tensor};
