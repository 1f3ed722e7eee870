use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("DFT size {dft_size} too small for {needed} distinct columns / rows")]
    DftTooSmall { dft_size: usize, needed: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("negative large-scale coefficient {value} at index {index}")]
    NegativeGamma { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("linear program inconclusive: {0}")]
    LpInconclusive(String),

    #[error("QP iteration cap {iterations} exceeded (KKT residual {residual:e})")]
    QpIterationLimit { iterations: usize, residual: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),
}
