use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("window at ({top}, {left}) of size {size} exceeds {height}x{width} image")]
    OutOfBounds {
        top: i64,
        left: i64,
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {term} loss at epoch {epoch}, step {step}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("dataset at {root}: {message}")]
    Dataset { root: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Codec(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
