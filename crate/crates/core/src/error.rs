use thiserror::Error;

/// Errors raised by the synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("{0} must be square")]
    NotSquare(String),

    #[error("{0} contains non-finite entries")]
    NonFinite(String),

    #[error("reference model is not stable: spectral radius {radius}")]
    UnstableReference { radius: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ill-conditioned matrix: {0}")]
    IllConditioned(String),

    #[error("oracle data missing: {0}")]
    MissingOracle(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed problem: {0}")]
    MalformedProblem(String),

    #[error("no stability certificate: {0}")]
    NoCertificate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        context: context.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
