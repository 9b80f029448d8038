use thiserror::Error;

use crate::params::Param;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error("mastery probability {0} is outside (0, 1]")]
    MasteryOutOfRange(f64),

    #[error("fixed point undefined: 1 - s - g = {denominator} is not positive")]
    UndefinedFixedPoint { denominator: f64 },

    #[error("attempt sequence is empty")]
    EmptySequence,

    #[error("dataset contains no learners")]
    EmptyDataset,

    #[error("{what} must be at least 1")]
    ZeroSize { what: &'static str },

    #[error("sequence of length {len} exceeds enumeration limit {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("degenerate sufficient statistics for {param}: A = {a}, B = {b}")]
    DegenerateStatistics { param: Param, a: f64, b: f64 },

    #[error("state is not strictly feasible: c(theta) = {constraint}")]
    InfeasibleState { constraint: f64 },

    #[error("Newton iteration did not converge at mu = {mu:e} (residual {residual:e} after {steps} steps)")]
    NonConvergence { mu: f64, residual: f64, steps: usize },

    #[error("KKT system is singular at mu = {mu:e} after {restarts} restarts")]
    SingularSystem { mu: f64, restarts: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
