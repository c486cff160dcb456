use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Codec(#[from] ricodec::Error),

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("bad input pattern: {0}")]
    Pattern(String),

    #[error("no point cloud files match `{0}`")]
    NoInput(String),

    #[error("decoder reconstruction of frame {0} differs from the encoder's")]
    Desync(usize),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Codec(ricodec::Error::Config(msg.into()))
    }

    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
