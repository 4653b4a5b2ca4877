use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time layout: {0}")]
    InvalidLayout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("cell (treated = {treated}, period = {period}) has {count} rows, need at least {required}")]
    SparseCell {
        treated: bool,
        period: u32,
        count: usize,
        required: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("plug-in covariance is not available for panel data; use the bootstrap covariance instead")]
    PanelNeedsBootstrap,

    #[error("the estimate carries no covariance matrix; estimate one with the bootstrap")]
    MissingCovariance,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min:e}, largest {max:e})")]
    NotPositiveSemidefinite { min: f64, max: f64 },

    #[error("design matrix is rank deficient (rank {rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("population construction failed: {0}")]
    Population(String),
}

pub type Result<T> = std::result::Result<T, Error>;
