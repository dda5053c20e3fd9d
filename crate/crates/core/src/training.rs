//! Training loop, augmentation, k-fold cross-validation and randomized search.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cube::{Datacube, Split, SplitUnit, TileWindow};
use crate::error::{Error, Result};
use crate::models::artifact::{input_window, EpochRecord, ModelArtifact, Predictor, UNetPredictor};
use crate::models::nn::{Adam, Tensor, UNet, UNetConfig};
use crate::models::{masked_rmse, masked_rmse_grad, ModelKind, TabularModel, TabularSpec};
use crate::raster::reflect_index;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement of the held-out loss before stopping.
    pub patience: usize,
    pub crop_size: usize,
    pub hflip: bool,
    pub vflip: bool,
    pub random_crop: bool,
    /// Augmented crops drawn from every training tile per epoch.
    pub crops_per_tile: usize,
    pub seed: u64,
    pub n_runs: usize,
    pub depth: usize,
    pub base_width: usize,
    /// Side of the non-overlapping split tiles.
    pub tile_size: usize,
    /// Side of the windows used for dense inference.
    pub inference_tile: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            crop_size: 512,
            hflip: true,
            vflip: true,
            random_crop: true,
            crops_per_tile: 1,
            seed: 0,
            n_runs: 3,
            depth: 4,
            base_width: 32,
            tile_size: 512,
            inference_tile: 512,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single laptop CPU and 512 x 512 synthetic sites.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            batch_size: 16,
            max_epochs: 80,
            crop_size: 64,
            crops_per_tile: 4,
            depth: 3,
            base_width: 8,
            tile_size: 128,
            inference_tile: 256,
            ..TrainConfig::default()
        }
    }

    pub fn unet_config(&self, in_channels: usize) -> UNetConfig {
        UNetConfig {
            in_channels,
            depth: self.depth,
            base_width: self.base_width,
        }
    }

    pub fn side_multiple(&self) -> usize {
        1usize.checked_shl(self.depth as u32).unwrap_or(0)
    }

    /// Lists every violated constraint at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if self.n_runs == 0 {
            problems.push("n_runs must be >= 1".to_string());
        }
        if self.crops_per_tile == 0 {
            problems.push("crops_per_tile must be >= 1".to_string());
        }
        if self.base_width == 0 {
            problems.push("base_width must be >= 1".to_string());
        }
        if self.depth == 0 || self.depth > 8 {
            problems.push(format!("depth must lie in 1..=8, got {}", self.depth));
        } else {
            let m = self.side_multiple();
            for (name, v) in [
                ("crop_size", self.crop_size),
                ("tile_size", self.tile_size),
                ("inference_tile", self.inference_tile),
            ] {
                if v == 0 || v % m != 0 {
                    problems.push(format!("{name} {v} must be a positive multiple of {m}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    /// Copy with some fields replaced, e.g. from a search draw. Unknown keys are errors.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Value>) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (k, val) in overrides {
            obj.insert(k.clone(), val.clone());
        }
        let cfg: TrainConfig = serde_json::from_value(v)
            .map_err(|e| Error::InvalidParameter(format!("training overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A square training window: inputs, AGB target and supervision mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `1 x C x size x size`.
    pub input: Tensor,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.input.h
    }

    pub fn n_supervised(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Window of `cube` at `tile`, supervised only where `supervision` is true inside the grid.
    pub fn from_cube(cube: &Datacube, tile: TileWindow, supervision: &[bool]) -> Sample {
        let grid = cube.grid();
        let s = tile.size;
        let input = input_window(cube.inputs(), tile.row, tile.col, s);
        let mut target = vec![0.0; s * s];
        let mut mask = vec![false; s * s];
        for r in 0..s.min(grid.height.saturating_sub(tile.row)) {
            for c in 0..s.min(grid.width.saturating_sub(tile.col)) {
                let i = (tile.row + r) * grid.width + tile.col + c;
                if supervision[i] {
                    if let Some(t) = cube.target_at(i) {
                        target[r * s + c] = t;
                        mask[r * s + c] = true;
                    }
                }
            }
        }
        Sample { input, target, mask }
    }

    /// Reflection-padded to at least `size` per side; padding carries no supervision.
    pub fn padded_to(&self, size: usize) -> Sample {
        let s = self.size();
        if s >= size {
            return self.clone();
        }
        let c = self.input.c;
        let mut input = vec![0f32; c * size * size];
        let mut target = vec![0.0; size * size];
        let mut mask = vec![false; size * size];
        for r in 0..size {
            let sr = reflect_index(r as isize, s);
            for k in 0..size {
                let sk = reflect_index(k as isize, s);
                for ch in 0..c {
                    input[ch * size * size + r * size + k] = self.input.data[ch * s * s + sr * s + sk];
                }
                if r < s && k < s {
                    target[r * size + k] = self.target[r * s + k];
                    mask[r * size + k] = self.mask[r * s + k];
                }
            }
        }
        Sample {
            input: Tensor::from_vec(1, c, size, size, input),
            target,
            mask,
        }
    }
}

/// Geometry of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentPlan {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub hflip: bool,
    pub vflip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub hflip: bool,
    pub vflip: bool,
    pub random_crop: bool,
}

impl From<&TrainConfig> for AugmentConfig {
    fn from(c: &TrainConfig) -> Self {
        AugmentConfig {
            crop_size: c.crop_size,
            hflip: c.hflip,
            vflip: c.vflip,
            random_crop: c.random_crop,
        }
    }
}

/// Draws a crop window and flips. With random cropping the window contains at least one
/// supervised pixel whenever the sample has any; without it the window is the top-left one.
pub fn plan_augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentPlan {
    let s = sample.size();
    let crop = cfg.crop_size.min(s);
    let (mut row, mut col) = (0, 0);
    if cfg.random_crop && crop < s {
        let sup: Vec<usize> = (0..s * s).filter(|&i| sample.mask[i]).collect();
        if sup.is_empty() {
            row = rng.gen_range(0..=s - crop);
            col = rng.gen_range(0..=s - crop);
        } else {
            let i = sup[rng.gen_range(0..sup.len())];
            let (r, c) = (i / s, i % s);
            row = rng.gen_range(r.saturating_sub(crop - 1)..=r.min(s - crop));
            col = rng.gen_range(c.saturating_sub(crop - 1)..=c.min(s - crop));
        }
    }
    AugmentPlan {
        row,
        col,
        size: crop,
        hflip: cfg.hflip && rng.gen_bool(0.5),
        vflip: cfg.vflip && rng.gen_bool(0.5),
    }
}

/// Applies one plan jointly to inputs, target and mask.
pub fn apply_augment(sample: &Sample, plan: &AugmentPlan) -> Sample {
    let s = sample.size();
    let z = plan.size;
    let c = sample.input.c;
    let mut input = vec![0f32; c * z * z];
    let mut target = vec![0.0; z * z];
    let mut mask = vec![false; z * z];
    for r in 0..z {
        let sr = plan.row + if plan.vflip { z - 1 - r } else { r };
        for k in 0..z {
            let sk = plan.col + if plan.hflip { z - 1 - k } else { k };
            let src = sr * s + sk;
            let dst = r * z + k;
            for ch in 0..c {
                input[ch * z * z + dst] = sample.input.data[ch * s * s + src];
            }
            target[dst] = sample.target[src];
            mask[dst] = sample.mask[src];
        }
    }
    Sample {
        input: Tensor::from_vec(1, c, z, z, input),
        target,
        mask,
    }
}

/// Pads by reflection when smaller than the crop, then crops and flips.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let padded = sample.padded_to(cfg.crop_size);
    let plan = plan_augment(&padded, cfg, rng);
    apply_augment(&padded, &plan)
}

fn stack(samples: &[Sample]) -> (Tensor, Vec<f64>, Vec<bool>) {
    let first = &samples[0].input;
    let mut data = Vec::with_capacity(samples.len() * first.sample_len());
    let mut target = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        data.extend_from_slice(&s.input.data);
        target.extend_from_slice(&s.target);
        mask.extend_from_slice(&s.mask);
    }
    (
        Tensor::from_vec(samples.len(), first.c, first.h, first.w, data),
        target,
        mask,
    )
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pooled masked RMSE of the network over whole tiles in inference mode.
fn tiles_rmse(net: &mut UNet, samples: &[Sample], mean: f64, std: f64) -> Result<f64> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        let y = net.forward(&s.input, false)?;
        pred.extend(y.data.iter().map(|&v| v as f64 * std + mean));
        target.extend_from_slice(&s.target);
        mask.extend_from_slice(&s.mask);
    }
    masked_rmse(&pred, &target, &mask)
}

/// Trains the masked UNet on the split's training tiles, early-stopping on its test tiles.
///
/// The network predicts standardized AGB; the loss is computed after mapping back to
/// Mg C/ha with the training targets' mean and std.
pub fn train_unet(cube: &Datacube, split: &Split, cfg: &TrainConfig) -> Result<ModelArtifact> {
    cfg.validate()?;
    let norm_stats = cube
        .norm_stats()
        .cloned()
        .ok_or_else(|| Error::StatsMismatch("training cube is not normalized".into()))?;
    if split.spec.unit != SplitUnit::Tile {
        return Err(Error::InvalidParameter("UNet training needs a tile split".into()));
    }
    let (train_mask, test_mask) = split.masks(cube);
    let train: Vec<Sample> = split
        .train_tiles()
        .into_iter()
        .map(|t| Sample::from_cube(cube, t, &train_mask))
        .filter(|s| s.n_supervised() > 0)
        .collect();
    if train.is_empty() {
        return Err(Error::NoSupervision);
    }
    let test: Vec<Sample> = split
        .test_tiles()
        .into_iter()
        .map(|t| Sample::from_cube(cube, t, &test_mask))
        .filter(|s| s.n_supervised() > 0)
        .map(|s| s.padded_to(cfg.side_multiple()))
        .collect();
    let (target_mean, mut target_std) = mean_std(
        train_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| cube.target_at(i).expect("supervised")),
    );
    if !(target_std > 1e-9) {
        target_std = 1.0;
    }

    let mut net = UNet::new(cfg.unet_config(cube.inputs().n_channels()), cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[1]));
    let aug = AugmentConfig::from(cfg);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, UNet)> = None;
    let mut last_finite = None;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len())
            .flat_map(|t| std::iter::repeat(t).take(cfg.crops_per_tile))
            .collect();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let samples: Vec<Sample> = idx.iter().map(|&t| augment(&train[t], &aug, &mut rng)).collect();
            let (x, target, mask) = stack(&samples);
            if !mask.iter().any(|m| *m) {
                continue;
            }
            let y = net.forward(&x, true)?;
            let pred: Vec<f64> = y.data.iter().map(|&v| v as f64 * target_std + target_mean).collect();
            let (loss, grad) = masked_rmse_grad(&pred, &target, &mask)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    batch: b,
                    loss,
                    last_finite,
                });
            }
            let dy = Tensor::from_vec(
                y.n,
                y.c,
                y.h,
                y.w,
                grad.iter().map(|g| (g * target_std) as f32).collect(),
            );
            net.zero_grad();
            net.backward(&dy);
            adam.step(&mut net.params_mut());
            batch_losses.push(loss);
        }
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;
        let test_loss = if test.is_empty() {
            None
        } else {
            Some(tiles_rmse(&mut net, &test, target_mean, target_std)?)
        };
        let monitored = test_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                batch: batch_losses.len(),
                loss: monitored,
                last_finite,
            });
        }
        last_finite = Some(train_loss);
        log::debug!("epoch {epoch}: train {train_loss:.3} test {test_loss:?}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            test_loss,
        });
        if best.as_ref().is_none_or(|b| monitored < b.0) {
            best = Some((monitored, epoch, net.clone()));
        } else if epoch - best.as_ref().unwrap().1 >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch");
    Ok(ModelArtifact {
        predictor: Predictor::UNet(UNetPredictor {
            net,
            target_mean,
            target_std,
            inference_tile: cfg.inference_tile,
        }),
        norm_stats,
        modality_subset: cube.subset(),
        train_seed: cfg.seed,
        split_seed: Some(split.spec.seed),
        history,
        best_epoch: Some(best_epoch),
    })
}

/// Fits a pixel-wise model on the supervised pixels selected by `train_mask`.
pub fn fit_tabular(spec: &TabularSpec, cube: &Datacube, train_mask: &[bool], seed: u64) -> Result<ModelArtifact> {
    let norm_stats = cube
        .norm_stats()
        .cloned()
        .ok_or_else(|| Error::StatsMismatch("training cube is not normalized".into()))?;
    let table = crate::models::extract_pixel_table(cube)?.filter_pixels(train_mask);
    if table.is_empty() {
        return Err(Error::NoSupervision);
    }
    let model = TabularModel::fit(spec, &table, seed)?;
    Ok(ModelArtifact {
        predictor: Predictor::Tabular {
            spec: spec.clone(),
            model,
        },
        norm_stats,
        modality_subset: cube.subset(),
        train_seed: seed,
        split_seed: cube.split_seed(),
        history: Vec::new(),
        best_epoch: None,
    })
}

/// Runs `f` over `jobs` on a pool of `workers` threads; results keep the input order.
pub fn run_jobs<J, T, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

/// One cross-validation fold: unit ids on each side, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
}

/// Seeded partition of `units` into `k` folds whose sizes differ by at most one.
/// Membership depends only on positions in `units`, never on the ids themselves.
pub fn kfold_partition(units: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if units.len() < k {
        return Err(Error::TooFewUnits {
            needed: k,
            found: units.len(),
        });
    }
    let mut pos: Vec<usize> = (0..units.len()).collect();
    pos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (q, r) = (units.len() / k, units.len() % k);
    let mut assignment = vec![0usize; units.len()];
    let mut start = 0;
    for f in 0..k {
        let len = q + usize::from(f < r);
        for &p in &pos[start..start + len] {
            assignment[p] = f;
        }
        start += len;
    }
    Ok((0..k)
        .map(|f| {
            let mut train = Vec::new();
            let mut held_out = Vec::new();
            for (p, &u) in units.iter().enumerate() {
                if assignment[p] == f {
                    held_out.push(u);
                } else {
                    train.push(u);
                }
            }
            train.sort_unstable();
            held_out.sort_unstable();
            Fold {
                index: f,
                train,
                held_out,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

impl CvResult {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let (mean, std) = mean_and_sample_std(&scores);
        CvResult { scores, mean, std }
    }
}

/// Mean and sample standard deviation; the std is 0 for a single value.
pub fn mean_and_sample_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// k-fold cross-validation; `score` gets each fold and a seed derived from `seed` and the
/// fold index.
pub fn kfold_cv<F>(units: &[usize], k: usize, seed: u64, workers: usize, score: F) -> Result<CvResult>
where
    F: Fn(&Fold, u64) -> Result<f64> + Sync + Send,
{
    let folds = kfold_partition(units, k, seed)?;
    let scores = run_jobs(workers, &folds, |f| score(f, seeds::derive(seed, &[f.index as u64])))?;
    Ok(CvResult::from_scores(scores))
}

/// Cross-validated RMSE of a pixel-wise model over the cube's supervised pixels in `mask`.
pub fn cv_tabular(spec: &TabularSpec, cube: &Datacube, mask: &[bool], k: usize, seed: u64, workers: usize) -> Result<CvResult> {
    let table = crate::models::extract_pixel_table(cube)?.filter_pixels(mask);
    let units: Vec<usize> = (0..table.len()).collect();
    kfold_cv(&units, k, seed, workers, |fold, s| {
        let model = TabularModel::fit(spec, &table.subset(&fold.train), s)?;
        let held = table.subset(&fold.held_out);
        let mask = vec![true; held.len()];
        masked_rmse(&model.predict_table(&held), &held.target, &mask)
    })
}

/// Cross-validated RMSE of the UNet over the split's training tiles.
pub fn cv_unet(cube: &Datacube, split: &Split, cfg: &TrainConfig, k: usize, seed: u64, workers: usize) -> Result<CvResult> {
    kfold_cv(&split.train, k, seed, workers, |fold, s| {
        let inner = Split {
            spec: split.spec,
            train: fold.train.clone(),
            test: fold.held_out.clone(),
            tiles: split.tiles.clone(),
        };
        let cfg = TrainConfig { seed: s, ..cfg.clone() };
        let artifact = train_unet(cube, &inner, &cfg)?;
        let (_, held_mask) = inner.masks(cube);
        let pred = crate::models::predict_dense(&artifact, cube)?;
        let target: Vec<f64> = (0..cube.grid().len()).map(|i| cube.target_at(i).unwrap_or(0.0)).collect();
        masked_rmse(pred.band(0), &target, &held_mask)
    })
}

/// Distribution of one hyperparameter. In TOML: `n_trees = { choice = [100, 300] }`,
/// `learning_rate = { log_uniform = [1e-4, 0.1] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamDist {
    Choice(Vec<Value>),
    Uniform([f64; 2]),
    LogUniform([f64; 2]),
    IntRange([i64; 2]),
}

impl ParamDist {
    fn validate(&self, name: &str) -> std::result::Result<(), String> {
        match self {
            ParamDist::Choice(v) if v.is_empty() => Err(format!("{name}: empty choice list")),
            ParamDist::Uniform([a, b]) if !(a <= b && a.is_finite() && b.is_finite()) => {
                Err(format!("{name}: uniform bounds [{a}, {b}] are invalid"))
            }
            ParamDist::LogUniform([a, b]) if !(*a > 0.0 && a <= b && b.is_finite()) => {
                Err(format!("{name}: log-uniform bounds [{a}, {b}] must be positive and ordered"))
            }
            ParamDist::IntRange([a, b]) if a > b => Err(format!("{name}: int range [{a}, {b}] is empty")),
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> Value {
        match self {
            ParamDist::Choice(v) => v[rng.gen_range(0..v.len())].clone(),
            ParamDist::Uniform([a, b]) => Value::from(a + (b - a) * rng.gen::<f64>()),
            ParamDist::LogUniform([a, b]) => Value::from((a.ln() + (b.ln() - a.ln()) * rng.gen::<f64>()).exp()),
            ParamDist::IntRange([a, b]) => Value::from(rng.gen_range(*a..=*b)),
        }
    }
}

pub type Hyperparams = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub model: ModelKind,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub params: BTreeMap<String, ParamDist>,
}

fn default_samples() -> usize {
    10
}

impl SearchSpace {
    pub fn default_for(model: ModelKind) -> Self {
        let choice = |v: Vec<Value>| ParamDist::Choice(v);
        let params: BTreeMap<String, ParamDist> = match model {
            ModelKind::UNet => [
                ("base_width", choice(vec![16.into(), 32.into(), 64.into()])),
                ("learning_rate", ParamDist::LogUniform([1e-4, 1e-1])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            ModelKind::RandomForest => [
                ("n_trees", choice(vec![100.into(), 300.into(), 500.into()])),
                ("max_depth", choice(vec![8.into(), 16.into(), "none".into()])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            ModelKind::GradientBoosting => [
                ("n_trees", choice(vec![100.into(), 300.into()])),
                ("learning_rate", choice(vec![0.05.into(), 0.1.into(), 0.3.into()])),
                ("max_depth", choice(vec![4.into(), 6.into(), 8.into()])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            ModelKind::Linear => BTreeMap::new(),
        };
        SearchSpace {
            model,
            n_samples: default_samples(),
            params,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let space: SearchSpace = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    /// Lists every problem at once. A linear model has nothing to tune and may be empty.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = self
            .params
            .iter()
            .filter_map(|(k, d)| d.validate(k).err())
            .collect();
        if self.params.is_empty() && self.model != ModelKind::Linear {
            problems.push("search space is empty".into());
        }
        if self.n_samples == 0 {
            problems.push("n_samples must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    /// `n` seeded draws, in parameter-name order within each draw.
    pub fn draw(&self, n: usize, seed: u64) -> Vec<Hyperparams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.params.iter().map(|(k, d)| (k.clone(), d.draw(&mut rng))).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub params: Hyperparams,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: usize,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Randomized search. Every `(trial, fold)` pair is an independent job scored by `score`
/// with the seed `derive(seed, [trial, fold])`; the best trial has the lowest mean fold
/// score, ties going to the earliest draw.
pub fn random_search<F>(space: &SearchSpace, n: usize, k: usize, seed: u64, workers: usize, score: F) -> Result<SearchResult>
where
    F: Fn(&Hyperparams, usize, u64) -> Result<f64> + Sync + Send,
{
    space.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("random search needs n >= 1".into()));
    }
    let draws = space.draw(n, seed);
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|t| (0..k).map(move |f| (t, f))).collect();
    let scores = run_jobs(workers, &jobs, |&(t, f)| {
        score(&draws[t], f, seeds::derive(seed, &[t as u64, f as u64]))
    })?;
    let trials: Vec<Trial> = draws
        .into_iter()
        .enumerate()
        .map(|(t, params)| {
            let fold_scores = scores[t * k..(t + 1) * k].to_vec();
            let (mean, std) = mean_and_sample_std(&fold_scores);
            Trial {
                trial: t,
                params,
                fold_scores,
                mean,
                std,
            }
        })
        .collect();
    let mut best = 0;
    for (t, trial) in trials.iter().enumerate() {
        let key = |x: f64| if x.is_nan() { f64::INFINITY } else { x };
        if key(trial.mean) < key(trials[best].mean) {
            best = t;
        }
    }
    Ok(SearchResult { best, trials })
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialRow {
    trial: usize,
    hyperparams: String,
    fold_scores: String,
    mean: f64,
    std: f64,
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for t in trials {
        w.serialize(TrialRow {
            trial: t.trial,
            hyperparams: serde_json::to_string(&t.params)?,
            fold_scores: t.fold_scores.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            mean: t.mean,
            std: t.std,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: TrialRow = row?;
        let fold_scores = row
            .fold_scores
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(Trial {
            trial: row.trial,
            params: serde_json::from_str(&row.hyperparams)?,
            fold_scores,
            mean: row.mean,
            std: row.std,
        });
    }
    Ok(out)
}
