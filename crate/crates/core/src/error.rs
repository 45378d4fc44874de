use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no depth value lies within (0, {max_range_mm}] mm")]
    NoEligiblePoints { max_range_mm: f64 },

    #[error("crop window {h}x{w} at ({row}, {col}) exceeds the {src_h}x{src_w} source")]
    OutOfBounds {
        h: usize,
        w: usize,
        row: usize,
        col: usize,
        src_h: usize,
        src_w: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("requested {requested} samples but only {available} are available")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("sparse depth has no valid measurement")]
    EmptySparseDepth,

    #[error("class id {id} is out of range for {nc} classes")]
    InvalidClassId { id: u32, nc: usize },

    #[error("depth mask selects no pixel")]
    EmptyMask,

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("missing input: {0}")]
    MissingInput(&'static str),

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("evaluation split is empty")]
    EmptySplit,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
