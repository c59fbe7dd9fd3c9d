use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its admissible range.
    InvalidParameter { name: &'static str, reason: String },
    /// A user or item index is outside the model.
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    /// Matrices or vectors whose shapes must agree do not.
    ShapeMismatch { context: &'static str, expected: (usize, usize), found: (usize, usize) },
    /// The singular value decomposition did not converge.
    Svd { rows: usize, cols: usize },
    /// A schedule cannot be executed as requested.
    Schedule(String),
    /// A policy was driven out of protocol order.
    Protocol(String),
    /// An error raised while executing round `round` of an episode.
    AtRound { round: usize, source: alloc::boxed::Box<Error> },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, reason } => write!(f, "invalid `{name}`: {reason}"),
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (< {bound})")
            }
            Error::ShapeMismatch { context, expected, found } => write!(
                f,
                "{context}: expected shape {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::Svd { rows, cols } => write!(f, "SVD of a {rows}x{cols} matrix did not converge"),
            Error::Schedule(msg) => write!(f, "schedule: {msg}"),
            Error::Protocol(msg) => write!(f, "policy protocol violation: {msg}"),
            Error::AtRound { round, source } => write!(f, "round {round}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
