use thiserror::Error;

/// Errors raised by grid construction, cost catalog, solvers and the scenario runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller broke an API contract (mismatched lengths, foreign grid, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative method failed to produce an answer.
    #[error("solver failure in {stage}: {reason} (residual {residual:.3e} after {iterations} iterations)")]
    Solver {
        stage: &'static str,
        reason: String,
        residual: f64,
        iterations: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn solver(
        stage: &'static str,
        reason: impl Into<String>,
        residual: f64,
        iterations: usize,
    ) -> Self {
        Error::Solver {
            stage,
            reason: reason.into(),
            residual,
            iterations,
        }
    }

    /// True for failures of an iterative method (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver { .. })
    }
}
