use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A sample standard deviation that feeds a bandwidth (or a correlation)
    /// was zero or not finite.
    DegenerateScale { what: String },
    /// Two correlated vectors where at least one is constant.
    UndefinedCorrelation,
    ShapeMismatch { expected: usize, found: usize, what: &'static str },
    InvalidArgument(String),
    EmptyDataset,
    MissingTruth,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DegenerateScale { what } => write!(f, "degenerate scale: {what} has zero spread"),
            Error::UndefinedCorrelation => f.write_str("correlation undefined for a constant vector"),
            Error::ShapeMismatch { expected, found, what } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::EmptyDataset => f.write_str("dataset has no rows"),
            Error::MissingTruth => f.write_str("no ground truth (xstar) column available"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
