use thiserror::Error;

/// Errors surfaced by simulation, analysis, and I/O entry points.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The operation is only defined in a narrower regime (dimension,
    /// exponent range, problem size) than the one requested.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The integrator produced a non-finite state component. The reported
    /// time is the end of the step on which finiteness was lost.
    #[error("blow-up detected at t = {t}: state left the finite range")]
    BlowUp { t: f64 },

    /// Configuration validation failed. Every problem found is listed, not
    /// just the first one.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
