use thiserror::Error;

/// Errors raised across the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measurement window: {0}")]
    InvalidWindow(String),

    #[error("every row of the window is constant; nothing to standardize")]
    AllRowsDegenerate,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("eigensolver failed to converge: {0}")]
    ConvergenceFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("law `{0}` has no distribution function on the real line")]
    UnsupportedLaw(String),

    #[error("x = {x} lies outside the interior interval [{lo}, {hi}]")]
    EdgeRegion { x: f64, lo: f64, hi: f64 },

    #[error("indicator reference has zero mean or non-positive variance")]
    DegenerateReference,

    #[error("stream has {available} samples, window needs {needed}")]
    StreamTooShort { needed: usize, available: usize },

    #[error("delay of {delay} samples on row {row} is not below half the stream length {limit}")]
    DelayTooLarge { row: usize, delay: usize, limit: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("row {row} has {found} cells, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("spectral sample is empty")]
    EmptySample,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
