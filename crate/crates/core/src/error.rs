use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("hermiticity defect {defect:.3e} exceeds tolerance {tolerance:.1e}")]
    NotHermitian { defect: f64, tolerance: f64 },

    #[error("eigensolver failed to converge (residual {residual:.3e})")]
    EigenNonConvergence { residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("field value {value} at t = {time} violates bounds [{lower}, {upper}]")]
    BoundsViolation {
        value: f64,
        time: f64,
        lower: f64,
        upper: f64,
    },

    #[error("time {time} lies outside the horizon [0, {horizon}]")]
    OutOfHorizon { time: f64, horizon: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral factors were not retained for toolkit entry {0}")]
    FactorsMissing(usize),

    #[error("toolkit entry {level}: {inner}")]
    ToolkitEntry {
        level: usize,
        inner: Box<Error>,
    },

    #[error("reference solver did not reach tolerance {tolerance:.1e} by N = {n_steps} (last gap {gap:.3e})")]
    ReferenceNotConverged {
        n_steps: usize,
        gap: f64,
        tolerance: f64,
    },

    #[error("order fit: {0}")]
    Fit(String),

    #[error("tolerance not reached: {0}")]
    Unreachable(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {inner}")]
    Context {
        context: String,
        inner: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }

    /// True when the failure is numerical rather than a usage/config problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::EigenNonConvergence { .. }
            | Error::NonFinite(_)
            | Error::ReferenceNotConverged { .. }
            | Error::Fit(_)
            | Error::Unreachable(_) => true,
            Error::ToolkitEntry { inner, .. } | Error::Context { inner, .. } => {
                inner.is_numerical()
            }
            _ => false,
        }
    }
}
