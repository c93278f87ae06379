use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index {index} out of range for length {len}")]
    Range { index: usize, len: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate fiber at subject {subject}, window {window}: constant across voxels")]
    DegenerateFiber { subject: usize, window: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
