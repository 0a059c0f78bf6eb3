use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A model evaluation produced a non-finite value.
    NonFinite { field: &'static str },
    /// Invalid parameter set or argument.
    InvalidParameter { name: &'static str, reason: &'static str },
    /// Track geometry could not be built.
    Track(&'static str),
    /// Projection onto the centerline did not converge.
    Projection { hint: f64, iterations: usize },
    /// A Gram matrix stayed indefinite after the maximum jitter.
    NotPositiveDefinite { what: &'static str },
    /// Mismatched dimensions between cooperating objects.
    Dimension { what: &'static str, expected: usize, got: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { field } => write!(f, "non-finite value in `{field}`"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid `{name}`: {reason}"),
            Error::Track(msg) => write!(f, "track: {msg}"),
            Error::Projection { hint, iterations } => write!(
                f,
                "centerline projection from hint {hint} did not converge in {iterations} iterations"
            ),
            Error::NotPositiveDefinite { what } => {
                write!(f, "{what} is not positive definite after maximum jitter")
            }
            Error::Dimension { what, expected, got } => {
                write!(f, "{what}: expected dimension {expected}, got {got}")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
