use std::io;

use thiserror::Error;

/// Errors produced by the solvers, the dataset tooling and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("fixed point did not converge after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("optimization aborted: {0}")]
    Optimization(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("route enumeration refused: {paths} paths exceed the guard of {limit}")]
    TooManyPaths { paths: u128, limit: u128 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input and schema problems, as opposed to failures of a solver run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Schema(_) | Error::Json(_) | Error::InvalidPolicy(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
