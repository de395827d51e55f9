use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidArgument` with a formatted message.
#[macro_export]
macro_rules! invalid_arg {
    ($($t:tt)*) => {
        return Err($crate::error::Error::InvalidArgument(format!($($t)*)))
    };
}

/// Shorthand for `Error::ShapeMismatch` with a formatted message.
#[macro_export]
macro_rules! shape_mismatch {
    ($($t:tt)*) => {
        return Err($crate::error::Error::ShapeMismatch(format!($($t)*)))
    };
}
