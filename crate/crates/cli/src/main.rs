//! `agbmap`: sparse-footprint biomass mapping from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use agb_core::cube::ModalitySubset;
use agb_core::evaluation::EvalSplit;
use agb_core::models::ModelKind;
use agb_core::wildfire::BurnIndex;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "agbmap", version = agb_core::VERSION, about = "Dense biomass maps from sparse footprints")]
pub struct Cli {
    /// Run configuration (TOML); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for job-parallel stages.
    #[arg(long, global = true, env = "AGBMAP_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CompositeMethod {
    Median,
    Mean,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic site: true AGB, scene series with manifests, footprints, zones.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generate the disjoint validation site paired with the configured scene.
        #[arg(long)]
        validation: bool,
        /// Also write a pre/post burn scene under `burn/`.
        #[arg(long)]
        burn: bool,
    },
    /// Composite a scene series listed in a manifest.
    Composite {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "median")]
        method: CompositeMethod,
        /// `START:END` in ISO dates (mean only).
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bilinearly resample a raster onto the grid of another.
    Resample {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        like: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average footprints into the cells of a reference grid.
    Match {
        #[arg(long)]
        footprints: PathBuf,
        #[arg(long)]
        like: PathBuf,
        /// Output directory: target.tif and match.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stack inputs and target into a normalized datacube.
    Cube {
        /// Synthetic site directory written by `synth`.
        #[arg(long, conflicts_with_all = ["s2", "s1", "gpp", "target"])]
        site: Option<PathBuf>,
        #[arg(long)]
        s2: Option<PathBuf>,
        #[arg(long)]
        s1: Option<PathBuf>,
        #[arg(long)]
        gpp: Option<PathBuf>,
        /// Matched AGB raster (NaN where unsupervised).
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        subset: Option<ModalitySubset>,
        /// Normalize with the statistics stored in this cube instead of this cube's own.
        #[arg(long)]
        stats_from: Option<PathBuf>,
        /// Skip normalization.
        #[arg(long, conflicts_with = "stats_from")]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the training tiles of a cube.
    Train {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Run index; the model seed is derived from the base model seed and this index.
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized hyperparameter search with k-fold cross-validation.
    Search {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Search space (TOML); defaults to the built-in space of the model.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Output directory: trials.csv and best.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked RMSE of a model on a cube.
    Evaluate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        /// `testing` scores the held-out tiles; `validation` scores every supervised pixel.
        #[arg(long, default_value = "validation")]
        split: EvalSplit,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every model on every modality subset, scored on both splits.
    Ablate {
        #[arg(long)]
        n_runs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wall-to-wall prediction (negative values clamped to 0).
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction distribution per climate zone.
    Zones {
        #[arg(long)]
        prediction: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long, default_value_t = 6)]
        top_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Biomass change against the burn ratio.
    Wildfire {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Post-fire NIR band.
        #[arg(long)]
        b08: PathBuf,
        /// Post-fire SWIR band.
        #[arg(long)]
        b12: PathBuf,
        /// Pre-fire bands, required for dNBR.
        #[arg(long)]
        b08_before: Option<PathBuf>,
        #[arg(long)]
        b12_before: Option<PathBuf>,
        #[arg(long, default_value = "nbr")]
        index: BurnIndex,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
