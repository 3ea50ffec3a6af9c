use std::path::PathBuf;

use cslr_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("landmark {landmark} is missing in every frame; nothing to interpolate from")]
    Imputation { landmark: usize },

    #[error("frame {frame}: torso bounding box is degenerate (zero width and height)")]
    DegeneratePose { frame: usize },

    #[error("invalid landmark remains at frame {frame}, landmark {landmark}")]
    InvalidLandmark { frame: usize, landmark: usize },

    #[error("{path}: record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("{path}: record {record}: expected {expected} landmarks per frame, blob holds {found}")]
    LandmarkCount {
        path: PathBuf,
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown gloss token {0:?}")]
    UnknownGloss(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("sample {id}: {frames} output frames cannot align a target needing {required}")]
    InfeasibleAlignment {
        id: String,
        frames: usize,
        required: usize,
    },

    #[error("WER is undefined for an empty reference")]
    EmptyReference,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corpus spec error: {0}")]
    CorpusSpec(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure class, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::CorpusSpec(_) | Error::Vocabulary(_) => ErrorKind::Config,
            Error::Tensor(_) | Error::Divergence { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
