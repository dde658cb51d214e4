use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{section}: {message}")]
    InvalidParameter { section: &'static str, message: String },

    #[error("kernel evaluated at coincident points ({x:?})")]
    SingularEvaluation { x: [f64; 2] },

    #[error("kernel assumption violated ({assumption}) at x = {x:?}, y = {y:?}: {detail}")]
    KernelViolation {
        assumption: &'static str,
        x: [f64; 2],
        y: [f64; 2],
        detail: String,
    },

    #[error("value {value} outside the admissible interval {interval}")]
    DomainViolation { value: f64, interval: &'static str },

    #[error("mean condition violated: {0}")]
    MeanCondition(String),

    #[error("dense nonlocal form for {cells} cells exceeds the budget of {limit} cells")]
    MemoryBudget { cells: usize, limit: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("incompatible transport velocity: {0}")]
    IncompatibleVelocity(String),

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(section: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            section,
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::SizeMismatch { what, expected, found })
    }
}
