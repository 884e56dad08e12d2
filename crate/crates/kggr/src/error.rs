//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    #[error("{op}: shapes do not conform: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("{op}: axis {axis} out of bounds for rank {rank}")]
    AxisOutOfBounds {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("backward: loss must be a scalar, got shape {shape}")]
    NonScalarLoss { shape: String },

    #[error("grad_check: function is not deterministic ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("vocabulary: duplicate or empty label '{0}'")]
    BadLabel(String),

    #[error("label '{0}' is not in the vocabulary")]
    UnknownLabel(String),

    #[error("category '{0}' has zero training occurrences")]
    ZeroOccurrence(String),

    #[error("category '{0}' has a zero-norm embedding vector")]
    ZeroNormEmbedding(String),

    #[error("embedding file is missing tokens: {0:?}")]
    MissingTokens(Vec<String>),

    #[error("embedding file: inconsistent vector length at line {line}: expected {expected}, got {got}")]
    EmbeddingLength {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("probabilities contain NaN")]
    NanProbability,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
