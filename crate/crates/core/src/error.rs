use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("scene has no visible nodes")]
    EmptyGraph,

    #[error("{0} head has no candidates")]
    EmptyHead(&'static str),

    #[error("invalid world spec: {0}")]
    Spec(String),

    #[error("expert has no action: {0}")]
    NoAction(String),

    #[error("recording failed: {0}")]
    Recording(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
