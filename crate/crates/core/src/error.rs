use thiserror::Error;

/// Errors raised by model construction, validation and filtering.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("adjacency entry ({row}, {col}) is negative: {value}")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("adjacency row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },

    #[error("adjacency diagonal entry ({row}, {row}) must be positive")]
    ZeroDiagonal { row: usize },

    #[error("adjacency entry ({row}, {col}) is not finite")]
    NonFiniteWeight { row: usize, col: usize },

    #[error("node index {index} out of range for a network of {node_count} nodes")]
    NodeOutOfRange { index: usize, node_count: usize },

    #[error("graphs have mismatched node counts: expected {expected}, found {found}")]
    NodeCountMismatch { expected: usize, found: usize },

    #[error("invalid topology schedule: {0}")]
    Schedule(String),

    #[error("horizon {horizon} does not cover a full interval of length {interval_length}")]
    EmptyInterval { horizon: usize, interval_length: usize },

    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: String, value: f64 },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("{what} is not positive semidefinite")]
    NotPositiveSemidefinite { what: String },

    #[error("{what} is not symmetric")]
    NotSymmetric { what: String },

    #[error("{what} is singular")]
    Singular { what: String },

    #[error("true {what} exceeds its declared bound")]
    BoundViolated { what: String },

    #[error("transition product requested from k={from} to j={to}, need j >= k")]
    ReversedTime { from: usize, to: usize },

    #[error("run {run} diverged at step {step}: {reason}")]
    Divergence {
        run: usize,
        step: usize,
        reason: String,
    },

    #[error("invalid experiment: {0}")]
    Experiment(String),

    #[error("scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>, expected: (usize, usize), found: (usize, usize)) -> Error {
    Error::DimensionMismatch {
        what: what.into(),
        expected,
        found,
    }
}
