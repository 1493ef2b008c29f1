use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("stationary distribution undefined: both transition probabilities are zero")]
    UndefinedStationary,
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("slot {slot}: {source}")]
    AtSlot {
        slot: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad input rather than by a failing computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Domain(_)
                | Error::UndefinedStationary
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
