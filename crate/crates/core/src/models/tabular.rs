//! Pixel-wise baselines: ordinary least squares, random forest and gradient boosting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tree::{BoostingParams, ForestParams, GradientBoosting, RandomForest, Rows, TreeParams};
use crate::cube::Datacube;
use crate::error::{Error, Result};

/// One row per supervised, input-valid pixel in row-major scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTable {
    pub channels: Vec<String>,
    /// Row-major `rows x channels` feature matrix.
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    /// Linear pixel index of each row.
    pub pixels: Vec<usize>,
}

impl PixelTable {
    pub fn n_features(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.features[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows::new(&self.features, self.n_features())
    }

    /// Sub-table with the listed rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> PixelTable {
        let mut features = Vec::with_capacity(rows.len() * self.n_features());
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        PixelTable {
            channels: self.channels.clone(),
            features,
            target: rows.iter().map(|&r| self.target[r]).collect(),
            pixels: rows.iter().map(|&r| self.pixels[r]).collect(),
        }
    }

    /// Rows whose pixel is selected by `mask`.
    pub fn filter_pixels(&self, mask: &[bool]) -> PixelTable {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| mask[self.pixels[r]]).collect();
        self.subset(&rows)
    }
}

pub fn extract_pixel_table(cube: &Datacube) -> Result<PixelTable> {
    let inputs = cube.inputs();
    let p = inputs.n_channels();
    let pixels: Vec<usize> = (0..inputs.n_pixels()).filter(|&i| cube.target_mask()[i]).collect();
    if pixels.is_empty() {
        return Err(Error::NoSupervisedPixels);
    }
    let mut features = Vec::with_capacity(pixels.len() * p);
    for &i in &pixels {
        features.extend((0..p).map(|c| inputs.band(c)[i]));
    }
    Ok(PixelTable {
        channels: inputs.channels().iter().map(|c| c.to_string()).collect(),
        features,
        target: pixels.iter().map(|&i| cube.target_at(i).expect("supervised")).collect(),
        pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularKind {
    #[serde(alias = "lr")]
    Linear,
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(alias = "gbm", alias = "xgboost")]
    GradientBoosting,
}

impl TabularKind {
    pub const ALL: [TabularKind; 3] = [TabularKind::Linear, TabularKind::RandomForest, TabularKind::GradientBoosting];

    pub fn as_str(self) -> &'static str {
        match self {
            TabularKind::Linear => "linear",
            TabularKind::RandomForest => "random_forest",
            TabularKind::GradientBoosting => "gradient_boosting",
        }
    }
}

impl fmt::Display for TabularKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TabularKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(TabularKind::Linear),
            "random_forest" | "rf" => Ok(TabularKind::RandomForest),
            "gradient_boosting" | "gbm" | "xgboost" => Ok(TabularKind::GradientBoosting),
            _ => Err(Error::InvalidParameter(format!("unknown tabular model {s:?}"))),
        }
    }
}

/// A model kind plus free-form hyperparameters, checked when fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSpec {
    pub kind: TabularKind,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, Value>,
}

impl TabularSpec {
    pub fn new(kind: TabularKind) -> Self {
        TabularSpec {
            kind,
            hyperparams: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }

    fn allowed_keys(&self) -> &'static [&'static str] {
        match self.kind {
            TabularKind::Linear => &[],
            TabularKind::RandomForest => &[
                "n_trees",
                "max_depth",
                "min_samples_leaf",
                "max_features",
                "bootstrap",
            ],
            TabularKind::GradientBoosting => &[
                "n_trees",
                "learning_rate",
                "max_depth",
                "min_samples_leaf",
                "subsample",
            ],
        }
    }

    /// Lists every problem with the hyperparameters at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for k in self.hyperparams.keys() {
            if !self.allowed_keys().contains(&k.as_str()) {
                problems.push(format!("{}: unknown hyperparameter {k:?}", self.kind));
            }
        }
        if problems.is_empty() {
            match self.kind {
                TabularKind::Linear => {}
                TabularKind::RandomForest => {
                    if let Err(e) = self.forest_params(1) {
                        problems.push(e);
                    }
                }
                TabularKind::GradientBoosting => {
                    if let Err(e) = self.boosting_params() {
                        problems.push(e);
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    fn usize_param(&self, key: &str, default: usize, min: usize) -> std::result::Result<usize, String> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => match v.as_u64() {
                Some(n) if n as usize >= min => Ok(n as usize),
                _ => Err(format!("{key} must be an integer >= {min}, got {v}")),
            },
        }
    }

    /// `null` or the string "none" means unlimited.
    fn depth_param(&self, default: Option<usize>) -> std::result::Result<Option<usize>, String> {
        match self.hyperparams.get("max_depth") {
            None => Ok(default),
            Some(Value::Null) => Ok(None),
            Some(Value::String(s)) if s.eq_ignore_ascii_case("none") => Ok(None),
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => Ok(Some(n as usize)),
                _ => Err(format!("max_depth must be a positive integer or none, got {v}")),
            },
        }
    }

    fn f64_param(&self, key: &str, default: f64, lo: f64, hi: f64) -> std::result::Result<f64, String> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x > lo && x <= hi => Ok(x),
                _ => Err(format!("{key} must lie in ({lo}, {hi}], got {v}")),
            },
        }
    }

    fn forest_params(&self, n_features: usize) -> std::result::Result<ForestParams, String> {
        let mtry = n_features.div_ceil(3).max(1);
        let bootstrap = match self.hyperparams.get("bootstrap") {
            None => true,
            Some(Value::Bool(b)) => *b,
            Some(v) => return Err(format!("bootstrap must be a boolean, got {v}")),
        };
        Ok(ForestParams {
            n_trees: self.usize_param("n_trees", 100, 1)?,
            tree: TreeParams {
                max_depth: self.depth_param(None)?,
                min_samples_split: 2,
                min_samples_leaf: self.usize_param("min_samples_leaf", 1, 1)?,
                max_features: Some(self.usize_param("max_features", mtry, 1)?.min(n_features.max(1))),
            },
            bootstrap,
        })
    }

    fn boosting_params(&self) -> std::result::Result<BoostingParams, String> {
        Ok(BoostingParams {
            n_trees: self.usize_param("n_trees", 100, 1)?,
            learning_rate: self.f64_param("learning_rate", 0.1, 0.0, 1.0)?,
            tree: TreeParams {
                max_depth: self.depth_param(Some(6))?,
                min_samples_split: 2,
                min_samples_leaf: self.usize_param("min_samples_leaf", 1, 1)?,
                max_features: None,
            },
            subsample: self.f64_param("subsample", 1.0, 0.0, 1.0)?,
        })
    }
}

/// Least-squares fit `y = coefficients . x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Rank-deficient design; the minimum-norm solution was used.
    pub singular: bool,
}

impl LinearModel {
    pub fn fit(rows: Rows<'_>, y: &[f64]) -> Result<Self> {
        let n = rows.len();
        let p = rows.n_features;
        if n < p {
            return Err(Error::InsufficientData(format!(
                "linear model needs at least {p} rows, got {n}"
            )));
        }
        // Centre columns so the intercept is not part of the conditioning problem.
        let mean_x: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| rows.row(i)[j]).sum::<f64>() / n as f64)
            .collect();
        let mean_y = y.iter().sum::<f64>() / n as f64;
        let a = DMatrix::from_fn(n, p, |i, j| rows.row(i)[j] - mean_x[j]);
        let b = DVector::from_iterator(n, y.iter().map(|v| v - mean_y));
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * (n.max(p) as f64) * f64::EPSILON * 16.0;
        let rank = svd.rank(eps.max(1e-300));
        let coef = svd.solve(&b, eps.max(1e-300)).map_err(|e| Error::InsufficientData(e.to_string()))?;
        let coefficients: Vec<f64> = coef.iter().copied().collect();
        let intercept = mean_y - coefficients.iter().zip(&mean_x).map(|(c, m)| c * m).sum::<f64>();
        Ok(LinearModel {
            coefficients,
            intercept,
            singular: rank < p,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TabularModel {
    Linear(LinearModel),
    RandomForest(RandomForest),
    GradientBoosting(GradientBoosting),
}

impl TabularModel {
    pub fn fit(spec: &TabularSpec, table: &PixelTable, seed: u64) -> Result<Self> {
        spec.validate()?;
        if table.is_empty() {
            return Err(Error::InsufficientData("no training rows".into()));
        }
        let rows = table.rows();
        let y = &table.target;
        Ok(match spec.kind {
            TabularKind::Linear => TabularModel::Linear(LinearModel::fit(rows, y)?),
            TabularKind::RandomForest => {
                let params = spec.forest_params(table.n_features()).map_err(Error::InvalidParameter)?;
                TabularModel::RandomForest(RandomForest::fit(rows, y, &params, seed))
            }
            TabularKind::GradientBoosting => {
                let params = spec.boosting_params().map_err(Error::InvalidParameter)?;
                TabularModel::GradientBoosting(GradientBoosting::fit(rows, y, &params, seed))
            }
        })
    }

    pub fn kind(&self) -> TabularKind {
        match self {
            TabularModel::Linear(_) => TabularKind::Linear,
            TabularModel::RandomForest(_) => TabularKind::RandomForest,
            TabularModel::GradientBoosting(_) => TabularKind::GradientBoosting,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TabularModel::Linear(m) => m.predict(x),
            TabularModel::RandomForest(m) => m.predict(x),
            TabularModel::GradientBoosting(m) => m.predict(x),
        }
    }

    pub fn predict_table(&self, table: &PixelTable) -> Vec<f64> {
        (0..table.len()).map(|r| self.predict(table.row(r))).collect()
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, TabularModel::Linear(m) if m.singular)
    }
}
