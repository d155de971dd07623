use std::fmt;

/// Errors produced by scenario handling, the smoothing recursions, and the
/// solvers.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration: dimension mismatch or violated invariant.
    /// The message names the offending field or quantity.
    Config(String),

    /// A scenario or report file could not be parsed.
    Parse(String),

    /// A recursion produced a non-finite intermediate value.
    Numeric {
        /// First time step (1-based) at which the failure was detected.
        step: usize,
        detail: String,
    },

    /// A size guard was exceeded (e.g. exhaustive enumeration horizon).
    Guard(String),

    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Numeric { step, detail } => {
                write!(f, "numerical failure at step {step}: {detail}")
            }
            Error::Guard(msg) => write!(f, "guard violated: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
