//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: ({x_min}, {y_min}, {x_max}, {y_max}) violates min <= max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("degenerate IoU: both boxes have zero area")]
    DegenerateIou,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty segmentation")]
    EmptySegmentation,

    #[error("empty evaluation: no ground-truth instances")]
    EmptyEvaluation,

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("bad file format: {0}")]
    FileFormat(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse category used by the CLI to prefix error messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } | Error::DegenerateIou => "geometry",
            Error::Config(_) => "config",
            Error::Shape(_) | Error::NonFinite { .. } => "numeric",
            Error::Parse { .. } | Error::Schema(_) | Error::EmptySegmentation => "input",
            Error::EmptyEvaluation | Error::Vocabulary(_) => "eval",
            Error::FileFormat(_) => "format",
            Error::GradCheck(_) => "gradcheck",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
