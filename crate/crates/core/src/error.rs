use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("all-zero row {0}")]
    AllZeroRow(usize),

    #[error("non-positive entry {value} at row {row}, column {col}")]
    NonPositive { row: usize, col: usize, value: f64 },

    #[error("negative count {value} at row {row}, column {col}")]
    NegativeCount { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column {0} has zero norm and cannot be normalized")]
    ZeroColumn(usize),

    #[error("group sizes {sizes:?} do not partition {expected} columns")]
    BadGroups { sizes: Vec<usize>, expected: usize },

    #[error("constraint matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("non-finite iterate at inner iteration {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("test fold has {0} samples; at least 5 are required")]
    TooFewTestSamples(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
