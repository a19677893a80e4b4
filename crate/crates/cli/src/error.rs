use serde_json::json;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] mixtsql::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("row {row}, column '{column}': value {value} outside the {domain} domain")]
    DomainViolation { row: usize, column: String, value: f64, domain: String },

    #[error("column '{0}' not found in the header")]
    MissingColumn(String),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("configuration: {0}")]
    Config(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Model(e) => e.kind(),
            CliError::Io { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::DomainViolation { .. } => "DomainViolation",
            CliError::MissingColumn(_) => "MissingColumn",
            CliError::Csv(_) => "CsvError",
            CliError::Config(_) => "ConfigError",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), message: err.to_string() }
    }

    /// Structured form written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "version": crate::VERSION,
            }
        })
    }
}
