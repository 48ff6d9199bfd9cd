use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum MmrError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("level {level} out of range 1..={levels}")]
    InvalidLevel { level: usize, levels: usize },

    #[error("part index {index} out of range at level {level} ({count} parts)")]
    InvalidPart {
        level: usize,
        index: usize,
        count: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("relaxation infeasible at level {level}: {detail}")]
    Infeasible { level: usize, detail: String },

    #[error("problem too large for enumeration: {states} states exceeds limit {limit}")]
    TooLarge { states: u128, limit: u128 },

    #[error("non-finite cost: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, MmrError>;
