//! Crate-wide error and result types.

use crate::types::{ModuleId, Tier};

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (missing files, bad bindings,
    /// shape mismatches between a checkpoint and a config).
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A dataset line failed validation; carries the 1-based line number.
    #[error("dataset error at line {line}: {msg}")]
    Dataset { line: usize, msg: String },

    /// A completion could not be parsed into the expected wire shape.
    #[error("parse error: {0}")]
    Parse(String),

    /// A tier backend failed after retries; the episode is aborted.
    #[error("backend failure in {module:?}/{tier:?}: {msg}")]
    Backend {
        module: ModuleId,
        tier: Tier,
        msg: String,
    },

    /// Remote transport failure (connect, status, malformed body).
    #[error("http error: {0}")]
    Http(String),

    /// Non-finite values appeared where finite math is required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Checkpoint file is corrupt or does not match the expected format.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
