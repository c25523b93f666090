use thiserror::Error;

/// Errors raised across the numerical layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImlError {
    /// Caller supplied an argument outside the operation's domain.
    #[error("input error: {0}")]
    Input(String),
    /// A series or quadrature failed to reach the requested tolerance.
    #[error("accuracy error: {0}")]
    Accuracy(String),
    /// The lattice is too coarse for the requested operator.
    #[error("resolution error: {0}")]
    Resolution(String),
    /// The requested computation exceeds the cost gate.
    #[error("resource error: {0}")]
    Resource(String),
    /// An iterative solver did not converge.
    #[error("solver error: {0}")]
    Solver(String),
    /// A documented precondition of a bound is not met.
    #[error("precondition not met: {0}")]
    Precondition(String),
    /// Parameters violate an admissibility inequality.
    #[error("inadmissible parameters: {0}")]
    Admissibility(String),
}

pub type Result<T> = std::result::Result<T, ImlError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(ImlError::Input(msg.into()))
}
