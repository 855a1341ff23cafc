use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite iterate produced at iteration {k}")]
    NonFiniteIterate { k: usize },

    #[error("non-finite gradient estimate at iteration {k}")]
    NonFiniteGradient { k: usize },

    #[error("missing constant `{constant}` required by {theorem}")]
    MissingConstant {
        constant: &'static str,
        theorem: &'static str,
    },

    #[error("{theorem} holds only for k >= {min}, got k = {k}")]
    BelowValidity {
        theorem: &'static str,
        min: usize,
        k: usize,
    },

    #[error("relative deviation undefined: the true gradient is zero")]
    ZeroGradient,

    #[error("rate fit needs at least {required} usable points in the window, found {found}")]
    InsufficientPoints { required: usize, found: usize },

    #[error("nothing to plot: {0}")]
    EmptyPlot(&'static str),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed trace file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
