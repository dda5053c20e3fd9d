use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("CRS mismatch: {0} vs {1}")]
    CrsMismatch(String, String),
    #[error("grids are not identical: {0}")]
    GridMismatch(String),
    #[error("source raster has no valid pixels")]
    EmptySource,
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("SCL value {value} at pixel ({row}, {col}) is not a class code in 0..=11")]
    BadClassCode { row: usize, col: usize, value: f64 },
    #[error("scene series is empty")]
    EmptySeries,
    #[error("no scene falls inside {0}")]
    EmptyWindow(String),
    #[error("invalid scene series: {0}")]
    InvalidSeries(String),
    #[error("missing channel {0} for the requested modality subset")]
    MissingModality(String),
    #[error("channel {channel} is degenerate (std {std:e})")]
    DegenerateChannel { channel: String, std: f64 },
    #[error("too few units: need at least {needed}, found {found}")]
    TooFewUnits { needed: usize, found: usize },
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("cube has no supervised pixels")]
    NoSupervisedPixels,
    #[error("model was trained on {artifact} but the cube holds {cube}")]
    ModalityMismatch { artifact: String, cube: String },
    #[error("cube normalization does not match the model: {0}")]
    StatsMismatch(String),
    #[error("training split has no supervised pixels")]
    NoSupervision,
    #[error("loss diverged at epoch {epoch}, batch {batch}: {loss} (last finite epoch loss {last_finite:?})")]
    DivergedLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        last_finite: Option<f64>,
    },
    #[error("evaluation split selects no supervised pixels")]
    EmptySplit,
    #[error("fewer than 2 jointly valid pixels ({0})")]
    InsufficientOverlap(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported or malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
