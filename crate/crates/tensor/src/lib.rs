//! Dense `f64` tensors and a recording tape for reverse-mode
//! differentiation, with the kernels the sign recognition models are built
//! from: projections, attention softmax, normalization, temporal
//! convolution, pooling and gated activations.
//!
//! Forward kernels are methods on [`Tape`]; each returns a [`Var`] handle and
//! records what its backward rule needs. Every kernel rejects non-finite
//! results instead of propagating them.

pub mod error;
pub mod gradcheck;
mod ops;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::conv_output_len;
pub use ops::{BatchMoments, BatchNormState, Padding};
pub use tape::{Buffer, Tape, Var};
pub use tensor::Tensor;
