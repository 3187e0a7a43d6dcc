use thiserror::Error;

/// Errors raised by the transform, gating, training and container code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("image dimension {height}x{width} is smaller than 2^{num_scales} = {min}")]
    DimensionTooSmall {
        height: usize,
        width: usize,
        num_scales: usize,
        min: usize,
    },
    #[error("angle count at the second scale must be a positive multiple of 4, got {0}")]
    BadAngleCount(usize),
    #[error("at least 3 scales are required, got {0}")]
    TooFewScales(usize),
    #[error("geometry has {0} scales; scale bands need at least 3")]
    GeometryTooShallow(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} channels, got {got}")]
    BadChannelCount { expected: usize, got: usize },
    #[error("backward pass requested without a cached forward pass")]
    MissingForwardCache,
    #[error("empty input")]
    EmptyInput,
    #[error("AUC needs both positive and negative labels")]
    SingleClassInput,
    #[error("malformed tensor container: {0}")]
    Container(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
