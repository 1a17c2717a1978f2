use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration")]
    Validation(Vec<FieldError>),
    #[error("computation failed: {0}")]
    Runtime(#[from] orbilab::Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation(vec![FieldError::new(field, message)])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }

    /// Machine-readable record written to stderr.
    pub fn record(&self) -> serde_json::Value {
        match self {
            CliError::Validation(errors) => serde_json::json!({ "status": "invalid", "errors": errors }),
            CliError::Runtime(e) => serde_json::json!({ "status": "failed", "message": e.to_string() }),
            CliError::Io(m) => serde_json::json!({ "status": "io-error", "message": m }),
        }
    }
}

/// Maps a core parameter error onto the `params.` field it came from.
pub fn from_core(e: orbilab::Error) -> CliError {
    match e {
        orbilab::Error::InvalidParameter { name, reason } => CliError::field(format!("params.{name}"), reason),
        orbilab::Error::InsufficientSamples { got, need } => {
            CliError::field("params.samples", format!("got {got}, need at least {need}"))
        }
        other => CliError::Runtime(other),
    }
}
