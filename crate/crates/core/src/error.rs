//! Error type shared by all pipeline stages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel exceeds image: kernel side {side}, image {width}x{height}")]
    KernelExceedsImage {
        side: usize,
        width: usize,
        height: usize,
    },

    #[error("degenerate histogram: fewer than two distinct values")]
    DegenerateHistogram,

    #[error("mode degenerate: no valid crossing on either side of the histogram mode")]
    ModeDegenerate,

    #[error("marker exceeds mask at pixel ({x}, {y})")]
    MarkerExceedsMask { x: usize, y: usize },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("no seeds: minima mask is empty")]
    NoSeeds,

    #[error("degenerate training set: {positives} positive / {negatives} negative samples")]
    DegenerateTrainingSet { positives: usize, negatives: usize },

    #[error("feature length mismatch: model expects {expected}, got {actual}")]
    FeatureLengthMismatch { expected: usize, actual: usize },

    #[error("cannot place cells: placed {placed} of {requested} after bounded retries")]
    CannotPlaceCells { placed: usize, requested: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid_parameter(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
