//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, model construction, training, and metrics.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or generator spec violated its invariants.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// A corpus file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Tensor or vector dimensions were inconsistent.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A request (trial counts, split sizes) cannot be satisfied by the data.
    #[error("infeasible request: {0}")]
    Infeasible(String),

    /// An input violated an operation precondition (zero vector, empty list, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A checkpoint file was malformed or of the wrong kind.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A speaker referenced during duration-model training has no embedding.
    #[error("missing embedding for speaker {0}")]
    MissingEmbedding(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
