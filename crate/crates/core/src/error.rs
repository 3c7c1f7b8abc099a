use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user configuration: missing columns, invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A series or table that failed to reach its tolerance.
    #[error("numerical error: {message} (achieved bound {achieved:e})")]
    Numerical { message: String, achieved: f64 },

    /// The request exceeds a configured resource cap.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures are distinguished from input problems so callers
    /// can map them to different exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}
