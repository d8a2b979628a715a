use thiserror::Error;

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Core(#[from] graphmimic::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("trajectory {trajectory} diverges at step {step}: {detail}")]
    Divergence { trajectory: usize, step: usize, detail: String },
}

pub type HubResult<T> = Result<T, HubError>;
