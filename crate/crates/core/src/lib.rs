//! Pose-based continuous sign language recognition.
//!
//! Keypoint preprocessing, two CTC-trained recognizers (a signer-invariant
//! conformer and a multi-scale fusion transformer), decoding, word error
//! rate, a synthetic corpus generator and the training / evaluation loop.

pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pose;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};
