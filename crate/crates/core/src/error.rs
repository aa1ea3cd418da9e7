use thiserror::Error;

/// Errors surfaced by the deblurring library.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or extent mismatch between operands.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid parameter value (out of range, wrong parity, unknown name).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Malformed file contents or unsupported encoding.
    #[error("format error: {0}")]
    Format(String),

    /// Numeric breakdown: non-finite values, residues above tolerance.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Unusable input data (empty dataset, missing ground truth).
    #[error("input error: {0}")]
    Input(String),

    /// Invariant violation inside the library; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
