use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error("numeric error: {0}")]
    Numeric(#[from] mohardy::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 3,
        }
    }
}
