use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum IbugError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A distribution fit failed. `last_iterate` holds the optimizer state at
    /// the point of failure (empty when no optimizer ran).
    #[error("fit error: {message}")]
    Fit {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl IbugError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        IbugError::InvalidInput(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        IbugError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn fit(message: impl Into<String>) -> Self {
        IbugError::Fit {
            message: message.into(),
            last_iterate: Vec::new(),
        }
    }

    /// Prefixes the message with `ctx`, keeping the error kind.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            IbugError::InvalidInput(m) => IbugError::InvalidInput(format!("{ctx}: {m}")),
            IbugError::UnsupportedModel(m) => IbugError::UnsupportedModel(format!("{ctx}: {m}")),
            IbugError::Parse { location, message } => IbugError::Parse {
                location,
                message: format!("{ctx}: {message}"),
            },
            IbugError::Fit { message, last_iterate } => IbugError::Fit {
                message: format!("{ctx}: {message}"),
                last_iterate,
            },
            IbugError::Numeric(m) => IbugError::Numeric(format!("{ctx}: {m}")),
            IbugError::Io(e) => IbugError::Io(std::io::Error::new(e.kind(), format!("{ctx}: {e}"))),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            IbugError::Fit { .. } | IbugError::Numeric(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, IbugError>;
