use thiserror::Error;

/// Errors produced by the discretization, solvers and drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("parameter {xi} outside knot range [{lo}, {hi}]")]
    OutOfRange { xi: f64, lo: f64, hi: f64 },

    #[error("derivative order {order} exceeds degree {degree}")]
    DerivativeOrder { order: usize, degree: usize },

    #[error("quadrature order {0} out of range 1..=16")]
    QuadratureOrder(usize),

    #[error("singular pivot at row {0}")]
    SingularPivot(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver failure at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("newton iteration did not converge after {iterations} iterations (last update {last_update:e})")]
    NewtonDivergence { iterations: usize, last_update: f64 },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
