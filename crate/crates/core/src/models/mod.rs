//! Masked UNet and pixel-wise baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod artifact;
pub mod loss;
pub mod nn;
pub mod tabular;
pub mod tree;

pub use artifact::{clamp_for_export, predict_dense, EpochRecord, ModelArtifact, Predictor, UNetPredictor};
pub use loss::{masked_rmse, masked_rmse_grad};
pub use tabular::{extract_pixel_table, PixelTable, TabularKind, TabularModel, TabularSpec};

/// Every model family in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lr")]
    Linear,
    #[serde(alias = "gbm", alias = "xgboost")]
    GradientBoosting,
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(rename = "unet")]
    UNet,
}

impl ModelKind {
    /// Report row order.
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Linear,
        ModelKind::GradientBoosting,
        ModelKind::RandomForest,
        ModelKind::UNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::GradientBoosting => "gbm",
            ModelKind::RandomForest => "rf",
            ModelKind::UNet => "unet",
        }
    }

    /// Short name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Linear => "LR",
            ModelKind::GradientBoosting => "XGBoost",
            ModelKind::RandomForest => "RF",
            ModelKind::UNet => "UNet",
        }
    }

    pub fn tabular(self) -> Option<TabularKind> {
        match self {
            ModelKind::Linear => Some(TabularKind::Linear),
            ModelKind::GradientBoosting => Some(TabularKind::GradientBoosting),
            ModelKind::RandomForest => Some(TabularKind::RandomForest),
            ModelKind::UNet => None,
        }
    }
}

impl From<TabularKind> for ModelKind {
    fn from(k: TabularKind) -> Self {
        match k {
            TabularKind::Linear => ModelKind::Linear,
            TabularKind::RandomForest => ModelKind::RandomForest,
            TabularKind::GradientBoosting => ModelKind::GradientBoosting,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(ModelKind::UNet),
            other => other.parse::<TabularKind>().map(Into::into).map_err(|_| {
                Error::InvalidParameter(format!("unknown model {s:?} (expected unet, linear, rf or gbm)"))
            }),
        }
    }
}
