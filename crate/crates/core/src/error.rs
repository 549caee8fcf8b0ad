use thiserror::Error;

/// Errors produced by graph construction, covariance estimation, design
/// search and the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs disagree on the number of regions, repetitions, or clusters.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix violates a structural requirement (symmetry, positive diagonal).
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// The symmetric eigensolver did not converge within its iteration budget.
    #[error("eigendecomposition did not converge within {0} iterations")]
    EigenNonConvergence(usize),

    /// A treatment matrix is not constant within the clusters of its design.
    #[error("design violation: {0}")]
    DesignViolation(String),

    /// A serialized graph, clustering, covariance or batch file is malformed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
