//! Filesystem-facing half of the compound expression recognition toolkit:
//! manifest CSVs and the train/val merge, image decoding and batching,
//! checkpoint files, the fit loop, report export, frame prediction, and the
//! `cer` command-line interface. All numerics live in `cer-core`.

pub mod batches;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod imaging;
pub mod manifest;
pub mod predict;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
