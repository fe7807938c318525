use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid result: {0}")]
    InvalidResult(String),

    #[error("transport solver did not converge after {iterations} pivots")]
    SolverNonConvergence { iterations: usize },

    #[error("divergence at t = {time}: |x| exceeded {limit:e}")]
    Divergence { time: f64, limit: f64 },

    #[error("infeasible at t = {time}: best rate {rate:.6e} above threshold {threshold:.6e}")]
    Infeasible { time: f64, rate: f64, threshold: f64 },

    #[error("construction failed at t = {time}: {reason}")]
    ConstructionFailure { time: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
