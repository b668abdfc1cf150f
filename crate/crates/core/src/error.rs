use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the documented domain of an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of vectors, matrices or networks do not chain.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A documented precondition of a construction or theorem does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numerical computation left its stable range.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// SGD loss blew up.
    #[error("training diverged at epoch {epoch}: loss {loss:.6e} vs initial {initial:.6e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    /// A construction audit found a value below its guaranteed lower bound.
    #[error("audit failure: {0}")]
    Audit(String),

    /// Malformed configuration or persisted artifact.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn ensure_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        })
    }
}
