use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed, inconsistent or out-of-domain input.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An SGD iterate became non-finite.
    #[error("iterate diverged at iteration {iteration}")]
    Divergence { iteration: u64 },

    /// The normal equations could not be solved.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    /// True for errors caused by the input rather than by the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::InvalidData(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
