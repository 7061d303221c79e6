use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HmhError>;

#[derive(Debug, Error)]
pub enum HmhError {
    #[error("node id {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: u64, n: usize },

    #[error("non-finite edge weight {weight} on edge ({u}, {v})")]
    NonFiniteWeight { u: u32, v: u32, weight: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("mask is empty: {0}")]
    EmptyMask(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl HmhError {
    pub fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        HmhError::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HmhError::Io {
            path: path.into(),
            source,
        }
    }
}
