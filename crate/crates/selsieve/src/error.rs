//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate index support")]
    DegenerateSupport,
    #[error("empty truncation cell")]
    EmptyTruncationCell,
    #[error("category {0} not observed in the data")]
    MissingCategory(usize),
    #[error("optimizer failed to converge after {iters} iterations (|grad| = {gnorm:.3e})")]
    NoConvergence { iters: usize, gnorm: f64 },
    #[error("non-finite objective or gradient at iterate {0}")]
    NonFiniteObjective(usize),
    #[error("perfect separation detected (coefficient norm exceeded {0})")]
    Separation(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("incompatible control variant for fitted architecture: {0}")]
    IncompatibleVariant(String),
    #[error("outcome coefficients unidentified in sample (x column {0} collinear)")]
    Unidentified(usize),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data validation failed: {0}")]
    Validation(String),
    #[error("replication failure rate {rate:.3} exceeds 0.05 ({failed}/{total})")]
    TooManyFailures { rate: f64, failed: usize, total: usize },
    #[error("ground truth missing from dataset: {0}")]
    TruthMissing(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-parsable code, used by the CLI for one-line error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateSupport => "E_DEGENERATE_SUPPORT",
            Error::EmptyTruncationCell => "E_EMPTY_CELL",
            Error::MissingCategory(_) => "E_MISSING_CATEGORY",
            Error::NoConvergence { .. } => "E_NO_CONVERGENCE",
            Error::NonFiniteObjective(_) => "E_NONFINITE",
            Error::Separation(_) => "E_SEPARATION",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::IncompatibleVariant(_) => "E_VARIANT",
            Error::Unidentified(_) => "E_UNIDENTIFIED",
            Error::Singular(_) => "E_SINGULAR",
            Error::InvalidArgument(_) => "E_INVALID_ARG",
            Error::Validation(_) => "E_VALIDATION",
            Error::TooManyFailures { .. } => "E_FAILURE_RATE",
            Error::TruthMissing(_) => "E_TRUTH_MISSING",
            Error::Io { .. } => "E_IO_NOT_FOUND",
            Error::Csv { .. } => "E_CSV",
        }
    }
}
