use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: String, node: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix decomposition failed for {what}")]
    Decomposition { what: String },

    #[error("covariance is not positive definite after jitter escalation (min eigenvalue estimate {min_eigenvalue:e})")]
    Conditioning { min_eigenvalue: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion { row: usize, column: String, message: String },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("iteration {iteration}, model `{model}`: {rejected} of {attempted} draws rejected")]
    TooManyRejections { iteration: usize, model: String, rejected: usize, attempted: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures as opposed to usage or configuration problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Decomposition { .. }
                | Error::Conditioning { .. }
                | Error::TooManyRejections { .. }
        )
    }
}
