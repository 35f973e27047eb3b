use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported NIfTI content in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },

    #[error("non axis-aligned affine in {path}: {reason}")]
    Orientation { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("detection failed for case {case}: {reason}")]
    Detection { case: String, reason: String },

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("case {case}: {reason}")]
    Case { case: String, reason: String },

    #[error("non-finite loss at epoch {epoch} step {step}; state dumped to {dump}")]
    NonFinite {
        epoch: usize,
        step: usize,
        dump: PathBuf,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Unsupported { .. } => "unsupported",
            Error::Orientation { .. } => "orientation",
            Error::Argument(_) => "argument",
            Error::Shape(_) => "shape",
            Error::Detection { .. } => "detection",
            Error::Normalization(_) => "normalization",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::Case { .. } => "case",
            Error::NonFinite { .. } => "non_finite",
            Error::Json { .. } => "json",
        }
    }
}
