use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    #[error("unknown {kind} `{id}`; valid ids: {valid}")]
    UnknownId {
        kind: &'static str,
        id: String,
        valid: String,
    },

    #[error("singular information matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error(
        "no sign change of the precision equation on [{lo:e}, {hi:e}] (values {f_lo:e}, {f_hi:e})"
    )]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("step halving could not restore an admissible, non-increasing step: {0}")]
    StepHalving(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{failed} of {total} fits did not converge")]
    NonConvergence { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
