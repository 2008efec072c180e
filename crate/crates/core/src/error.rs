use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degree error: {0}")]
    Degree(String),
    #[error("support violation: {0}")]
    Support(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
