use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcnError>;

/// Errors raised by tensors, kernels and their checks.
#[derive(Debug, Error)]
pub enum LcnError {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncation { expected: u64, found: u64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("dimension error: {0}")]
    Dim(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index error: {0}")]
    Index(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("group error: {0}")]
    Group(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl LcnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LcnError::Io {
            path: path.into(),
            source,
        }
    }
}
