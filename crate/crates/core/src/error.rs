use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the flowfields library.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite sample position ({0}, {1})")]
    NonFinitePosition(f32, f32),

    #[error("scale {0} is missing from the scale space")]
    MissingScale(usize),

    #[error("nothing to evaluate: {0}")]
    Empty(String),

    #[error("image of {width}x{height} exceeds the exhaustive-search guard of {limit} pixels")]
    GuardExceeded {
        width: usize,
        height: usize,
        limit: usize,
    },
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

impl FlowError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlowError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FlowError::Parameter(msg.into())
    }
}
