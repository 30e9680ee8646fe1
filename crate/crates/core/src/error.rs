use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum PtychoError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("index {index} out of range for {len} scan locations")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("anchor {index} at ({row}, {col}) places a {patch}x{patch} patch outside the {rows}x{cols} image")]
    AnchorOutOfBounds { index: usize, row: i64, col: i64, patch: usize, rows: usize, cols: usize },

    #[error("zero energy: {0}")]
    ZeroEnergy(String),

    #[error("non-finite value at iteration {iteration} in {operator}")]
    NonFinite { iteration: usize, operator: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("unknown dataset version {0:?}")]
    UnknownVersion(String),

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl PtychoError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PtychoError::InvalidParam(_) | PtychoError::Config(_) => ErrorClass::Config,
            PtychoError::NonFinite { .. } | PtychoError::ZeroEnergy(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            PtychoError::MissingFile(path)
        } else {
            PtychoError::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, PtychoError>;
