//! Error types shared across the crate.

use thiserror::Error;

/// Errors from the dense-matrix and differentiation layer.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: operand shapes {}x{} and {}x{} are incompatible", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid matrix shape {rows}x{cols} for buffer of length {len}")]
    BadShape { rows: usize, cols: usize, len: usize },

    #[error("non-finite {what} at flat index {index}")]
    NonFinite { what: String, index: usize },

    #[error("gradient-check eps {eps} outside [1e-8, 1e-4]")]
    EpsOutOfRange { eps: f64 },

    #[error("non-finite objective while probing parameter {param} entry {index}")]
    NonFiniteProbe { param: usize, index: usize },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid system state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
