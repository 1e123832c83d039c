use std::path::PathBuf;

/// Errors produced anywhere in the tracking stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate quadrilateral: {0}")]
    DegenerateQuad(String),

    #[error("point maps to infinity under homography")]
    PointAtInfinity,

    #[error("singular homography (|det| = {0:e})")]
    Singular(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weight topology mismatch: {0}")]
    WeightTopologyMismatch(String),

    #[error("insufficient support: {supported} pixels with weight > 0.1, need {required}")]
    InsufficientSupport { supported: usize, required: usize },

    #[error("quad lies outside the frame")]
    QuadOutOfFrame,

    #[error("track lost: all reboot candidates exhausted")]
    LostTrack,

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
