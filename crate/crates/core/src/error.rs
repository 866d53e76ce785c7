use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The iterate left the feasible set `W <= I / phi`.
    #[error("feasibility violated at iteration {iteration}: phi * ||W||_2 = {value}")]
    Infeasible { iteration: usize, value: f64 },

    #[error("calibration failed for column {column}: curvature {curvature}")]
    Calibration { column: usize, curvature: f64 },

    #[error("oracle failed: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, Error>;
