use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so a front end can map them onto exit codes:
/// validation problems, simulator capacity, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not unitary (residual {residual:.3e})")]
    NotUnitary { residual: f64 },

    #[error(
        "row {row} has no mass; sample at least {min_shots} shots \
         (coupon-collector bound for d={d} at p=0.99)"
    )]
    EmptyRow { row: usize, d: usize, min_shots: u64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("register of {requested} qubits exceeds the {limit}-qubit cap")]
    Capacity { requested: usize, limit: usize },

    #[error("non-finite objective value {value} at theta = {theta:?}")]
    NonFinite { value: f64, theta: Vec<f64> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
