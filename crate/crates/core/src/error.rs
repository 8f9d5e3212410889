use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("internal consistency error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! internal {
    ($($arg:tt)*) => {
        $crate::error::Error::Internal(alloc::format!($($arg)*))
    };
}

pub(crate) use internal;
pub(crate) use invalid;
