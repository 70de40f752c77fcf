use std::path::PathBuf;

/// Errors produced anywhere in the conversion stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("waveform too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("loss node is not scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter key mismatch: {0}")]
    KeyMismatch(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("model not ready: {0}")]
    ModelNotReady(String),

    #[error("no utterances found in {0}")]
    NoUtterances(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad magic bytes in checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape_err(layer: &str, expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        layer: layer.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
