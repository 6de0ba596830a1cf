use thiserror::Error;

/// Errors raised by the simulator and its analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or backends that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    /// `<V>` vanished, so the interacting component cannot be projected out.
    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite amplitudes appeared during integration.
    #[error("numerical abort at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String },

    /// Invalid configuration value. `key` is the dotted path of the offending entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
