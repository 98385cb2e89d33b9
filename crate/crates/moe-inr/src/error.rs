//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss at iteration {iter} (loss={loss}); aborting training")]
    NonFiniteLoss { iter: usize, loss: f64 },

    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unsupported audio file: {0}")]
    Audio(String),

    #[error("point cloud error: {0}")]
    Cloud(String),

    #[error("image too small for SSIM window ({0}x{1} < 11x11)")]
    SsimWindow(usize, usize),

    #[error("trimap band is empty for d={0}")]
    BandEmpty(f64),

    #[error("grid resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),

    #[error("grid resolution {requested} exceeds cap {cap}")]
    ResolutionCap { requested: usize, cap: usize },

    #[error("mesh format error: {0}")]
    Mesh(String),

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("missing run data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
