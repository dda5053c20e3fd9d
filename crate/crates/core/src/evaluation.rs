//! RMSE reports across models, modality subsets and splits, plus climate-zone summaries.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::cube::{normalize, split, Datacube, ModalitySubset, SplitSpec};
use crate::error::{Error, Result};
use crate::models::artifact::Predictor;
use crate::models::{extract_pixel_table, masked_rmse, predict_dense, ModelArtifact, ModelKind, TabularKind, TabularSpec};
use crate::raster::Raster;
use crate::seeds;
use crate::training::{fit_tabular, mean_and_sample_std, run_jobs, train_unet, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub rmse: f64,
    pub n_pixels: usize,
}

/// RMSE of the artifact over the cube's supervised pixels selected by `mask`.
pub fn evaluate(artifact: &ModelArtifact, cube: &Datacube, mask: &[bool]) -> Result<EvalResult> {
    if mask.len() != cube.grid().len() {
        return Err(Error::ShapeMismatch("evaluation mask does not match the cube".into()));
    }
    let sel: Vec<bool> = mask.iter().zip(cube.target_mask()).map(|(a, b)| *a && *b).collect();
    let n_pixels = sel.iter().filter(|m| **m).count();
    if n_pixels == 0 {
        return Err(Error::EmptySplit);
    }
    let rmse = match &artifact.predictor {
        // Pixel-wise models only need the selected rows.
        Predictor::Tabular { model, .. } => {
            artifact.check_cube(cube)?;
            let table = extract_pixel_table(cube)?.filter_pixels(&sel);
            masked_rmse(&model.predict_table(&table), &table.target, &vec![true; table.len()])?
        }
        Predictor::UNet(_) => {
            let pred = predict_dense(artifact, cube)?;
            let target: Vec<f64> = (0..sel.len()).map(|i| cube.target_at(i).unwrap_or(0.0)).collect();
            masked_rmse(pred.band(0), &target, &sel)?
        }
    };
    Ok(EvalResult { rmse, n_pixels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Held-out tiles of the training site.
    Testing,
    /// A separate site never seen in training.
    Validation,
}

impl EvalSplit {
    pub const ALL: [EvalSplit; 2] = [EvalSplit::Testing, EvalSplit::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Testing => "testing",
            EvalSplit::Validation => "validation",
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "testing" => Ok(EvalSplit::Testing),
            "validation" => Ok(EvalSplit::Validation),
            _ => Err(Error::InvalidParameter(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: ModelKind,
    pub modality_subset: ModalitySubset,
    pub split: EvalSplit,
    pub rmse_mean: f64,
    /// Sample std over model seeds with the data split held fixed; 0 for a single run.
    pub rmse_std: f64,
    pub n_runs: usize,
    pub n_pixels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    model: ModelKind,
    modality_subset: ModalitySubset,
    n_runs: usize,
    testing_mean: Option<f64>,
    testing_std: Option<f64>,
    testing_n_pixels: Option<usize>,
    validation_mean: Option<f64>,
    validation_std: Option<f64>,
    validation_n_pixels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_TITLE: &str = "Evaluation RMSE (Mg C/ha)";

impl EvalReport {
    pub fn get(&self, model: ModelKind, subset: ModalitySubset, split: EvalSplit) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.modality_subset == subset && r.split == split)
    }

    /// Distinct (model, subset) pairs in row order.
    pub fn cells(&self) -> Vec<(ModelKind, ModalitySubset)> {
        let mut out: Vec<(ModelKind, ModalitySubset)> = Vec::new();
        for r in &self.rows {
            if !out.contains(&(r.model, r.modality_subset)) {
                out.push((r.model, r.modality_subset));
            }
        }
        out
    }

    /// One line per model and input set with testing and validation columns.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (m, s) in self.cells() {
            let side = |sp| self.get(m, s, sp);
            let (t, v) = (side(EvalSplit::Testing), side(EvalSplit::Validation));
            w.serialize(CsvRow {
                model: m,
                modality_subset: s,
                n_runs: t.or(v).map(|r| r.n_runs).unwrap_or(0),
                testing_mean: t.map(|r| r.rmse_mean),
                testing_std: t.map(|r| r.rmse_std),
                testing_n_pixels: t.map(|r| r.n_pixels),
                validation_mean: v.map(|r| r.rmse_mean),
                validation_std: v.map(|r| r.rmse_std),
                validation_n_pixels: v.map(|r| r.n_pixels),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let mut rows = Vec::new();
        for line in r.deserialize() {
            let c: CsvRow = line?;
            let sides = [
                (EvalSplit::Testing, c.testing_mean, c.testing_std, c.testing_n_pixels),
                (EvalSplit::Validation, c.validation_mean, c.validation_std, c.validation_n_pixels),
            ];
            for (split, mean, std, n) in sides {
                match (mean, std, n) {
                    (Some(rmse_mean), Some(rmse_std), Some(n_pixels)) => rows.push(EvalRow {
                        model: c.model,
                        modality_subset: c.modality_subset,
                        split,
                        rmse_mean,
                        rmse_std,
                        n_runs: c.n_runs,
                        n_pixels,
                    }),
                    (None, None, None) => {}
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "report line for {} {} has a partial {split} entry",
                            c.model, c.modality_subset
                        )))
                    }
                }
            }
        }
        Ok(EvalReport { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvalReport::from_csv_str(&s)
    }

    /// Text table: one row per model and input set, testing and validation columns.
    pub fn format_table(&self) -> String {
        let cell = |m, s, sp| {
            self.get(m, s, sp)
                .map(|r| format!("{:.2} ± {:.2}", r.rmse_mean, r.rmse_std))
                .unwrap_or_else(|| "-".into())
        };
        let mut out = String::new();
        let _ = writeln!(out, "{REPORT_TITLE}");
        let _ = writeln!(out, "{:<8} {:<10} {:>16} {:>16}", "Model", "Inputs", "Testing", "Validation");
        for (m, s) in self.cells() {
            let _ = writeln!(
                out,
                "{:<8} {:<10} {:>16} {:>16}",
                m.label(),
                s.as_str(),
                cell(m, s, EvalSplit::Testing),
                cell(m, s, EvalSplit::Validation)
            );
        }
        out
    }
}

/// Hyperparameters of the pixel-wise baselines used in the ablation.
pub fn default_tabular_spec(kind: TabularKind) -> TabularSpec {
    match kind {
        TabularKind::Linear => TabularSpec::new(kind),
        TabularKind::RandomForest => TabularSpec::new(kind).with("n_trees", 100),
        TabularKind::GradientBoosting => TabularSpec::new(kind)
            .with("n_trees", 100)
            .with("learning_rate", 0.1)
            .with("max_depth", 4),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub models: Vec<ModelKind>,
    pub subsets: Vec<ModalitySubset>,
    pub n_runs: usize,
    /// Seed of the fixed train/test tile split.
    pub split_seed: u64,
    /// Base of the per-run model seeds.
    pub seed: u64,
    pub train: TrainConfig,
    pub linear: TabularSpec,
    pub random_forest: TabularSpec,
    pub gradient_boosting: TabularSpec,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            models: ModelKind::ALL.to_vec(),
            subsets: ModalitySubset::ALL.to_vec(),
            n_runs: 3,
            split_seed: 1,
            seed: 0,
            train: TrainConfig::desk(),
            linear: default_tabular_spec(TabularKind::Linear),
            random_forest: default_tabular_spec(TabularKind::RandomForest),
            gradient_boosting: default_tabular_spec(TabularKind::GradientBoosting),
        }
    }
}

impl AblationConfig {
    pub fn tabular_spec(&self, kind: TabularKind) -> &TabularSpec {
        match kind {
            TabularKind::Linear => &self.linear,
            TabularKind::RandomForest => &self.random_forest,
            TabularKind::GradientBoosting => &self.gradient_boosting,
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        seeds::derive(self.seed, &[run as u64])
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_runs == 0 {
            problems.push("n_runs must be >= 1".to_string());
        }
        if self.models.is_empty() {
            problems.push("models is empty".to_string());
        }
        if self.subsets.is_empty() {
            problems.push("subsets is empty".to_string());
        }
        if let Err(e) = self.train.validate() {
            problems.push(e.to_string());
        }
        for kind in TabularKind::ALL {
            let spec = self.tabular_spec(kind);
            if spec.kind != kind {
                problems.push(format!("{kind} spec has kind {}", spec.kind));
            } else if let Err(e) = spec.validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

/// One trained model scored on both splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub modality_subset: ModalitySubset,
    pub run: usize,
    pub seed: u64,
    pub testing_rmse: f64,
    pub validation_rmse: f64,
    pub n_testing: usize,
    pub n_validation: usize,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
}

/// Normalized training and validation cubes for one subset, sharing training statistics.
pub fn prepare_subset(train_site: &Datacube, validation_site: &Datacube, subset: ModalitySubset) -> Result<(Datacube, Datacube)> {
    let train = normalize(&train_site.restrict(subset)?, None)?;
    let val = normalize(&validation_site.restrict(subset)?, train.norm_stats())?;
    Ok((train, val))
}

/// Trains and scores one model on a prepared subset.
pub fn run_cell(
    cfg: &AblationConfig,
    model: ModelKind,
    train: &Datacube,
    val: &Datacube,
    run: usize,
) -> Result<RunRecord> {
    let seed = cfg.run_seed(run);
    let sp = split(train, &SplitSpec::tiles(cfg.split_seed, cfg.train.tile_size))?;
    let (train_mask, test_mask) = sp.masks(train);
    let artifact = match model.tabular() {
        Some(kind) => fit_tabular(cfg.tabular_spec(kind), train, &train_mask, seed)?,
        None => train_unet(train, &sp, &TrainConfig { seed, ..cfg.train.clone() })?,
    };
    let testing = evaluate(&artifact, train, &test_mask)?;
    let validation = evaluate(&artifact, val, &vec![true; val.grid().len()])?;
    Ok(RunRecord {
        model,
        modality_subset: train.subset(),
        run,
        seed,
        testing_rmse: testing.rmse,
        validation_rmse: validation.rmse,
        n_testing: testing.n_pixels,
        n_validation: validation.n_pixels,
        best_epoch: artifact.best_epoch,
    })
}

/// Aggregates per-run records into mean and sample std per model, subset and split.
pub fn summarize(runs: &[RunRecord], models: &[ModelKind], subsets: &[ModalitySubset]) -> EvalReport {
    let mut rows = Vec::new();
    for &m in models {
        for &s in subsets {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.model == m && r.modality_subset == s).collect();
            if cell.is_empty() {
                continue;
            }
            for sp in EvalSplit::ALL {
                let (vals, n): (Vec<f64>, usize) = match sp {
                    EvalSplit::Testing => (cell.iter().map(|r| r.testing_rmse).collect(), cell[0].n_testing),
                    EvalSplit::Validation => (cell.iter().map(|r| r.validation_rmse).collect(), cell[0].n_validation),
                };
                let (mean, std) = mean_and_sample_std(&vals);
                rows.push(EvalRow {
                    model: m,
                    modality_subset: s,
                    split: sp,
                    rmse_mean: mean,
                    rmse_std: std,
                    n_runs: vals.len(),
                    n_pixels: n,
                });
            }
        }
    }
    EvalReport { rows }
}

/// Every model on every subset, `n_runs` seeds each, scored on held-out tiles of the
/// training site and on the whole validation site.
pub fn ablation(train_site: &Datacube, validation_site: &Datacube, cfg: &AblationConfig, workers: usize) -> Result<AblationOutcome> {
    cfg.validate()?;
    let prepared = cfg
        .subsets
        .iter()
        .map(|&s| prepare_subset(train_site, validation_site, s))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for &m in &cfg.models {
        for k in 0..cfg.subsets.len() {
            for run in 0..cfg.n_runs {
                jobs.push((m, k, run));
            }
        }
    }
    let runs = run_jobs(workers, &jobs, |&(m, k, run)| {
        let (train, val) = &prepared[k];
        let rec = run_cell(cfg, m, train, val, run)?;
        log::info!(
            "{} {} run {}: testing {:.3}, validation {:.3}",
            m.label(),
            cfg.subsets[k],
            run,
            rec.testing_rmse,
            rec.validation_rmse
        );
        Ok(rec)
    })?;
    Ok(AblationOutcome {
        report: summarize(&runs, &cfg.models, &cfg.subsets),
        runs,
    })
}

pub fn write_runs_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in runs {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Köppen-Geiger classes by integer code (0 = unclassified).
pub const KOPPEN_CLASSES: [&str; 30] = [
    "Af", "Am", "Aw", "BWh", "BWk", "BSh", "BSk", "Csa", "Csb", "Csc", "Cwa", "Cwb", "Cwc", "Cfa", "Cfb", "Cfc",
    "Dsa", "Dsb", "Dsc", "Dsd", "Dwa", "Dwb", "Dwc", "Dwd", "Dfa", "Dfb", "Dfc", "Dfd", "ET", "EF",
];

pub fn koppen_symbol(code: u8) -> Option<&'static str> {
    (1..=30).contains(&code).then(|| KOPPEN_CLASSES[code as usize - 1])
}

pub fn koppen_code(symbol: &str) -> Option<u8> {
    KOPPEN_CLASSES.iter().position(|s| *s == symbol).map(|i| i as u8 + 1)
}

/// Linearly interpolated quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const ZONE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRow {
    pub code: u8,
    pub zone: String,
    pub count: usize,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    /// Largest zones first.
    pub rows: Vec<ZoneRow>,
    /// Classified pixels in zones beyond the top `n`.
    pub other_zones: usize,
    /// Valid predictions without a zone code.
    pub unclassified: usize,
    pub total_valid: usize,
}

/// Distribution of predictions in the `top_n` largest climate zones.
pub fn climate_zone_summary(prediction: &Raster, zones: &Raster, top_n: usize) -> Result<ZoneSummary> {
    prediction.grid().ensure_same(zones.grid())?;
    let pred = prediction.band(0);
    let zone = zones.band(0);
    let mut per_zone: Vec<Vec<f64>> = vec![Vec::new(); 31];
    let mut unclassified = 0;
    let mut total_valid = 0;
    for i in 0..pred.len() {
        if !prediction.valid_mask()[i] {
            continue;
        }
        total_valid += 1;
        let z = zone[i];
        let code = (zones.valid_mask()[i] && z.fract() == 0.0 && (1.0..=30.0).contains(&z)).then_some(z as usize);
        match code {
            Some(c) => per_zone[c].push(pred[i]),
            None => unclassified += 1,
        }
    }
    let mut codes: Vec<usize> = (1..=30).filter(|&c| !per_zone[c].is_empty()).collect();
    codes.sort_by(|&a, &b| per_zone[b].len().cmp(&per_zone[a].len()).then(a.cmp(&b)));
    let other_zones = codes.iter().skip(top_n).map(|&c| per_zone[c].len()).sum();
    let rows = codes
        .into_iter()
        .take(top_n)
        .map(|c| {
            let v = &mut per_zone[c];
            v.sort_by(f64::total_cmp);
            let q: Vec<f64> = ZONE_QUANTILES.iter().map(|&p| quantile_sorted(v, p)).collect();
            ZoneRow {
                code: c as u8,
                zone: KOPPEN_CLASSES[c - 1].to_string(),
                count: v.len(),
                p5: q[0],
                p25: q[1],
                p50: q[2],
                p75: q[3],
                p95: q[4],
            }
        })
        .collect();
    Ok(ZoneSummary {
        rows,
        other_zones,
        unclassified,
        total_valid,
    })
}

impl ZoneSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Box plot per zone, left to right in row order: whiskers at p5/p95, box p25-p75,
    /// black median bar. The value axis spans 0 to the largest p95.
    pub fn write_boxplot(&self, path: &Path) -> Result<()> {
        const W: u32 = 80;
        const H: u32 = 400;
        const PAD: u32 = 20;
        let n = self.rows.len().max(1) as u32;
        let mut img = RgbImage::from_pixel(n * W + 2 * PAD, H + 2 * PAD, Rgb([255, 255, 255]));
        let top = self.rows.iter().map(|r| r.p95).fold(1e-9, f64::max);
        let lo = self.rows.iter().map(|r| r.p5).fold(0.0, f64::min);
        let y = |v: f64| PAD + H - (((v - lo) / (top - lo)) * H as f64).round().clamp(0.0, H as f64) as u32;
        for yy in PAD..=PAD + H {
            img.put_pixel(PAD - 2, yy, Rgb([0, 0, 0]));
        }
        for (k, r) in self.rows.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let x0 = PAD + k as u32 * W;
            let (bx0, bx1) = (x0 + W / 4, x0 + 3 * W / 4);
            let mid = x0 + W / 2;
            for yy in y(r.p95)..=y(r.p5) {
                img.put_pixel(mid, yy, Rgb([60, 60, 60]));
            }
            for xx in x0 + 3 * W / 8..=x0 + 5 * W / 8 {
                img.put_pixel(xx, y(r.p95), Rgb([60, 60, 60]));
                img.put_pixel(xx, y(r.p5), Rgb([60, 60, 60]));
            }
            for yy in y(r.p75)..=y(r.p25) {
                for xx in bx0..=bx1 {
                    img.put_pixel(xx, yy, color);
                }
            }
            for dy in 0..2 {
                for xx in bx0..=bx1 {
                    img.put_pixel(xx, (y(r.p50) + dy).min(PAD + H), Rgb([0, 0, 0]));
                }
            }
        }
        img.save(path).map_err(Error::from)
    }
}

const PALETTE: [Rgb<u8>; 6] = [
    Rgb([230, 159, 0]),
    Rgb([86, 180, 233]),
    Rgb([0, 158, 115]),
    Rgb([240, 228, 66]),
    Rgb([0, 114, 178]),
    Rgb([213, 94, 0]),
];
