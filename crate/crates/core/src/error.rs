use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: zero denominator at flat index {index}")]
    ZeroDenominator { op: &'static str, index: usize },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("temperature {0} outside (0, 0.4]")]
    InvalidTemperature(f64),

    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("probability vector needs at least 2 components, got {0}")]
    TooFewClasses(usize),

    #[error("class index {index} outside 1..={d}")]
    ClassOutOfRange { index: usize, d: usize },

    #[error("L1 norm {0:e} below 1e-12; cannot normalize")]
    DegenerateNorm(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),

    #[error("confusion matrix has zero total mass")]
    ZeroMass,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}, T={temperature}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        temperature: f64,
    },

    #[error("csv row {row}, column {column:?}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    CsvParse(#[from] csv::Error),
}
