use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure at step {step}: {msg}")]
    Numerical { step: usize, msg: String },

    #[error("problem size {size:.3e} exceeds enumeration limit {limit:.0e}")]
    SizeLimit { size: f64, limit: f64 },

    #[error("degenerate sufficient statistics: no state carries weight")]
    DegenerateStats,

    #[error("degenerate regression design for state {state}")]
    DegenerateDesign { state: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(step: usize, msg: impl Into<String>) -> Self {
        Error::Numerical {
            step,
            msg: msg.into(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad data or configuration rather than by
    /// a numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::Format(_) | Error::Domain(_) | Error::SizeLimit { .. } => {
                true
            }
            Error::AtIteration { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
