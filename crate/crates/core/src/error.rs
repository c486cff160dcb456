use thiserror::Error;

/// Errors produced by the codec library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("truncated record: {len} bytes is not a multiple of {record}")]
    TruncatedRecord { len: usize, record: usize },

    #[error("unknown point cloud format `{0}`")]
    UnknownFormat(String),

    #[error("malformed {format} input: {msg}")]
    Parse { format: &'static str, msg: String },

    #[error("invalid projection parameters: {0}")]
    InvalidParams(String),

    #[error("malformed quadtree side info: {0}")]
    MalformedQuadtree(String),

    #[error("too few matched keypoints ({0})")]
    FewKeypoints(usize),

    #[error("pose estimation did not converge (mean residual {0:.4} m)")]
    NonConvergent(f64),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("inter frame received without a reference reconstruction")]
    MissingReference,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("length mismatch: {0} targets vs {1} measurements")]
    LengthMismatch(usize, usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStream(msg.into())
    }
}
