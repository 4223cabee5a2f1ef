use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// An API contract was violated (bad stage, scale, or precondition).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed file contents (container, calibration, PFM, PNG payload).
    #[error("format error: {0}")]
    Format(String),
    /// Checkpoint and configuration disagree.
    #[error("version mismatch: {0}")]
    Version(String),
    /// A training step produced a non-finite loss or otherwise failed.
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by user input (bad flags, files, config),
    /// false for internal failures.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Format(_) | Error::Version(_) | Error::Io(_) | Error::Image(_)
        )
    }
}
