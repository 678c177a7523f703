use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter dimensions do not line up.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A model or run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A scenario string could not be parsed or violates its invariants.
    #[error("invalid scenario '{text}': {reason}")]
    Scenario { text: String, reason: String },

    /// A dataset is missing classes or examples required by the caller.
    #[error("dataset error: {0}")]
    Data(String),

    /// A label referenced a class that the mask excludes.
    #[error("label {label} points to a masked-out class")]
    MaskedLabel { label: usize },

    /// A gradient entry was NaN or infinite.
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),

    /// A parameter name was looked up but does not exist.
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    /// Feature archive or checkpoint file is malformed.
    #[error("archive format error: {0}")]
    Format(String),

    /// Continual-learning state was used inconsistently.
    #[error("invalid state: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// WAV decoding failed.
    #[error("wav error: {0}")]
    Wav(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
