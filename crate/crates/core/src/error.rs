use thiserror::Error;

/// Errors raised by the simulation library and the CLI front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{name}`; valid names: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("unsupported dimension {0}: quadrature-based operations support d <= 2")]
    UnsupportedDimension(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
