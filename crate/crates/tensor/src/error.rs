use thiserror::Error;

/// Failures raised by tensor kernels and the tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: sequence too short (length {len}, need at least {need})")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        need: usize,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("batch norm running statistics used before any training update")]
    UninitializedStats,

    #[error("backward must start from a single-element output, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}
