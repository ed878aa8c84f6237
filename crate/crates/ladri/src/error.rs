//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LadriError>;

#[derive(Debug, Error)]
pub enum LadriError {
    /// A kinematic quantity is non-finite or outside its physical domain.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Vehicles are not arranged the way an operation requires.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// A configuration field failed validation.
    #[error("invalid config: field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    /// An input value is outside an operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Network shapes or weights are inconsistent.
    #[error("model error: {0}")]
    Model(String),

    /// Training or evaluation data is malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A class is too small (or absent) for stratified splitting.
    #[error("stratify error: stage class {class} has {count} samples, need at least {needed}")]
    Stratify {
        class: usize,
        count: usize,
        needed: usize,
    },

    /// A generated dataset is missing a stage class entirely.
    #[error("coverage error: stage class {class} absent from generated dataset")]
    Coverage { class: usize },

    /// A CSV row failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A CSV header does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A persisted model does not match the current format or feature contract.
    #[error("version error: {0}")]
    Version(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LadriError {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        LadriError::Config {
            field,
            message: message.into(),
        }
    }
}
