use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("resource cap exceeded: {0}")]
    Resource(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("memorization set contains duplicate tokens")]
    DuplicateTokens,
    #[error("no separating direction found after {0} attempts")]
    Separation(usize),
    #[error("region filter accepted {accepted} of {drawn} draws")]
    DegenerateFilter { accepted: usize, drawn: usize },
    #[error("training diverged at step {step}: risk {risk:.3e} vs initial {initial:.3e}")]
    Diverged { step: usize, risk: f64, initial: f64 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
