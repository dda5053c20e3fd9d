use std::collections::BTreeMap;
use std::path::Path;

use agb_core::compositing::DateWindow;
use agb_core::cube::{ModalitySubset, SplitSpec};
use agb_core::evaluation::{default_tabular_spec, AblationConfig};
use agb_core::models::{ModelKind, TabularKind, TabularSpec};
use agb_core::synth::{SceneParams, SCENE_YEAR};
use agb_core::training::{SearchSpace, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Train/test tile split.
    pub split: u64,
    /// Base of model seeds; run `r` uses a seed derived from this and `r`.
    pub model: u64,
    pub search: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 1,
            model: 0,
            search: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSection {
    pub linear: BTreeMap<String, Value>,
    pub random_forest: BTreeMap<String, Value>,
    pub gradient_boosting: BTreeMap<String, Value>,
}

impl Default for TabularSection {
    fn default() -> Self {
        let map = |k| default_tabular_spec(k).hyperparams;
        TabularSection {
            linear: map(TabularKind::Linear),
            random_forest: map(TabularKind::RandomForest),
            gradient_boosting: map(TabularKind::GradientBoosting),
        }
    }
}

impl TabularSection {
    pub fn spec(&self, kind: TabularKind) -> TabularSpec {
        let hyperparams = match kind {
            TabularKind::Linear => &self.linear,
            TabularKind::RandomForest => &self.random_forest,
            TabularKind::GradientBoosting => &self.gradient_boosting,
        };
        TabularSpec {
            kind,
            hyperparams: hyperparams.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub models: Vec<ModelKind>,
    pub subsets: Vec<ModalitySubset>,
    pub n_runs: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            models: ModelKind::ALL.to_vec(),
            subsets: ModalitySubset::ALL.to_vec(),
            n_runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { k: 5 }
    }
}

/// Everything a run needs; every field has a default so partial files are fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Compositing window, `START:END`.
    pub window: String,
    pub modality_subset: ModalitySubset,
    pub model: ModelKind,
    pub seeds: Seeds,
    pub scene: SceneParams,
    pub train: TrainConfig,
    pub tabular: TabularSection,
    pub cv: CvSection,
    pub ablation: AblationSection,
    pub search: Option<SearchSpace>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window: DateWindow::summer(SCENE_YEAR).to_string(),
            modality_subset: ModalitySubset::Full,
            model: ModelKind::UNet,
            seeds: Seeds::default(),
            scene: SceneParams::default(),
            train: TrainConfig::desk(),
            tabular: TabularSection::default(),
            cv: CvSection::default(),
            ablation: AblationSection::default(),
            search: None,
        }
    }
}

impl RunConfig {
    /// Loads a config file, or the `config` table of a snapshot written by a previous run.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let body = match (table.contains_key("tool_version"), table.remove("config")) {
                    (true, Some(inner)) => inner,
                    (_, Some(inner)) => {
                        table.insert("config".into(), inner);
                        toml::Value::Table(table)
                    }
                    (_, None) => toml::Value::Table(table),
                };
                body.try_into().with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reports every invalid field at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.window.parse::<DateWindow>() {
            problems.push(format!("window: {e}"));
        }
        if let Err(e) = self.scene.validate() {
            problems.push(format!("scene: {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {e}"));
        }
        for kind in TabularKind::ALL {
            if let Err(e) = self.tabular.spec(kind).validate() {
                problems.push(format!("tabular.{kind}: {e}"));
            }
        }
        if self.cv.k < 2 {
            problems.push(format!("cv.k must be >= 2, got {}", self.cv.k));
        }
        if self.ablation.n_runs == 0 {
            problems.push("ablation.n_runs must be >= 1".into());
        }
        if self.ablation.models.is_empty() {
            problems.push("ablation.models is empty".into());
        }
        if self.ablation.subsets.is_empty() {
            problems.push("ablation.subsets is empty".into());
        }
        if let Some(s) = &self.search {
            if let Err(e) = s.validate() {
                problems.push(format!("search: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
        }
    }

    pub fn window(&self) -> DateWindow {
        self.window.parse().expect("validated")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec::tiles(self.seeds.split, self.train.tile_size)
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            models: self.ablation.models.clone(),
            subsets: self.ablation.subsets.clone(),
            n_runs: self.ablation.n_runs,
            split_seed: self.seeds.split,
            seed: self.seeds.model,
            train: self.train.clone(),
            linear: self.tabular.spec(TabularKind::Linear),
            random_forest: self.tabular.spec(TabularKind::RandomForest),
            gradient_boosting: self.tabular.spec(TabularKind::GradientBoosting),
        }
    }
}

#[derive(Debug, Serialize)]
struct Snapshot<'a> {
    tool_version: &'a str,
    command: &'a str,
    /// Paths and flags given on the command line.
    arguments: &'a BTreeMap<String, String>,
    config: &'a RunConfig,
}

/// Writes `<command>.config.toml` into `dir`: the resolved configuration, the command-line
/// arguments and the tool version.
pub fn write_snapshot(dir: &Path, command: &str, args: &BTreeMap<String, String>, cfg: &RunConfig) -> Result<()> {
    let snap = Snapshot {
        tool_version: agb_core::VERSION,
        command,
        arguments: args,
        config: cfg,
    };
    let text = toml::to_string_pretty(&snap).context("serializing config snapshot")?;
    let path = dir.join(format!("{command}.config.toml"));
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
