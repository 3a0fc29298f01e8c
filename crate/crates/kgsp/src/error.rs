//! Crate-wide error type.
//!
//! Errors are split into two families so the command-line front end can map
//! them onto exit codes: I/O failures (exit code 2) and domain errors such as
//! malformed data or impossible requests (exit code 1).

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("feature store: {0}")]
    Features(String),

    #[error("embeddings: {0}")]
    Embeddings(String),

    #[error("feasibility: {0}")]
    Feasibility(String),

    #[error("split: {0}")]
    Split(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training: {0}")]
    Train(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for domain errors, 2 for I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
