use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} unsupported (need 3 <= d <= 8)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty site set")]
    EmptySet,
    #[error("requested relative error {requested:e} not achievable; best is {achievable:e} at truncation {truncation}")]
    ToleranceUnachievable { requested: f64, achievable: f64, truncation: usize },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("incompatible samples: {0}")]
    Incompatible(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
