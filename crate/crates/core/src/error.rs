use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpiError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported sphere dimension n={0} (pointwise evaluation supports n=2 and n=3)")]
    UnsupportedDimension(usize),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("minimality condition violated for degree m={degree}: {reason}")]
    Minimality { degree: usize, reason: String },

    #[error("no degree satisfies the minimality condition (excluded: {excluded:?})")]
    EmptyMinimalSet { excluded: Vec<usize> },

    #[error("lag {lag} outside the resolvable range of a grid with {grid} points")]
    LagOutOfRange { lag: i64, grid: usize },

    #[error("infeasible uncertainty class: {0}")]
    Infeasible(String),

    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, SpiError>;
