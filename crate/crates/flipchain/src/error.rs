//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in something outside an operation's domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A numeric routine failed (non-PD matrix, overflow, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An iterative solve ran out of budget; carries the residual it reached.
    #[error("iteration did not converge: residual {residual:.3e} > tol {tol:.3e}")]
    NonConvergence { residual: f64, tol: f64 },

    /// The spectrum is degenerate at working precision and the requested
    /// operation assumes simple eigenvalues.
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    /// Exact Gaussian pairings are only defined for the λ' = 0 measure.
    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
