use thiserror::Error;

/// Errors raised by the coordination library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("profile layout mismatch: expected {expected:?}, got {actual:?}")]
    Layout {
        expected: crate::network::Layout,
        actual: crate::network::Layout,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("subsystem {index} expects {expected} input, got {actual}")]
    Mode {
        index: usize,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("condensed form is undefined: subsystem {0} is a black box")]
    NotLinear(usize),

    #[error("subsystem {index} failed: {source}")]
    Subsystem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid strategy: {0}")]
    Strategy(String),

    #[error("least-squares solve failed: {0}")]
    LeastSquares(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("filter design failed: {0}")]
    Design(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: impl Into<String>, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context: context.into(),
            expected,
            actual,
        })
    }
}
