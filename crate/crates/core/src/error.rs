use alloc::string::String;

/// Errors shared by every module of the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
