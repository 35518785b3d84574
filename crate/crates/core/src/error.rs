use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DrlError>;

#[derive(Debug, Error)]
pub enum DrlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate split: {train} train rows, {test} test rows")]
    DegenerateSplit { train: usize, test: usize },

    #[error("rho = {rho} is not below the feasibility ceiling {rho_bar} for {m} points")]
    RhoTooLarge { rho: f64, rho_bar: f64, m: usize },

    #[error("non-finite loss value at position {index}")]
    NonFiniteLoss { index: usize },

    #[error("bisection on {what} failed to bracket the root: [{lo}, {hi}] gives residuals [{f_lo}, {f_hi}]")]
    BracketFailure {
        what: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("combinatorial limit exceeded: {0}")]
    TooLarge(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: no rows")]
    NoRows { path: PathBuf },

    #[error("{path}: labels are not binary, found {labels:?}")]
    NonBinaryLabels { path: PathBuf, labels: Vec<String> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DrlError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DrlError::InvalidArgument(msg.into())
    }
}
