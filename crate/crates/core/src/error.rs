use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coverage gap: {0}")]
    Coverage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("training diverged at epoch {epoch}, sample {sample}: loss = {loss}")]
    Diverged {
        epoch: usize,
        sample: usize,
        loss: f64,
    },

    #[error("missing model for method {0}")]
    MissingModel(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
