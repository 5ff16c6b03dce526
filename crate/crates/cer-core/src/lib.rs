//! Core numerics for compound facial expression recognition.
//!
//! This crate holds everything that does not touch the filesystem: the dense
//! tensor type and its backprop-capable layers, the three feature encoders
//! (a patch transformer, a multi-scale + local-attention network, and a
//! bottleneck residual network), the late-fusion classifier head, the
//! cross-entropy / Adam / warmup training math, and the confusion-matrix
//! based evaluation metrics.
//!
//! The crate is `no_std` (with `alloc`); all transcendental math goes through
//! [`libm`] so results are identical with or without the standard library.
//! IO, checkpoint files, dataset manifests and the CLI live in the companion
//! `cer-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod batch;
pub mod error;
pub mod fmath;
pub mod fusion;
pub mod gradcheck;
pub mod labels;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod presets;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod train;

pub mod encoders;

pub use batch::ImageBatch;
pub use error::{CoreError, Result};
pub use labels::LabelSpace;
pub use rng::Rng;
pub use store::{Ctx, GradStore, ParamId, ParamStore};
pub use tensor::Tensor;
