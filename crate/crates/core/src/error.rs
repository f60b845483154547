use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("{0}")]
    Validation(String),

    #[error("column '{0}' not found")]
    MissingColumn(String),

    #[error("risk {risk} has no observed events; {hint}")]
    MissingRisk { risk: usize, hint: String },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all {trials} search trials failed: {diagnostics}")]
    SearchFailed { trials: usize, diagnostics: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad user input rather than a bug or an
    /// environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::Shape(_))
    }
}
