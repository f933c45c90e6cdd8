//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("SVD did not converge after {iterations} iterations")]
    SvdNonConvergence { iterations: usize },
    #[error("structural mismatch between hierarchical operands: {0}")]
    StructureMismatch(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("point lies on the boundary surface; potentials are undefined there")]
    PointOnBoundary,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
