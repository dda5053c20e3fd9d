//! Data preparation chain shared by the command-line tool and the ablation harness:
//! composite and resample the inputs, match footprints, stack the cube.

use crate::compositing::{median_composite, temporal_mean, DateWindow};
use crate::cube::{assemble, match_footprints, Datacube, FootprintSet, Matched, ModalitySubset};
use crate::error::Result;
use crate::raster::{bilinear_resample, Grid, Raster};
use crate::synth::{generate_scene, sample_footprints, SceneParams, SynthScene, SCENE_YEAR};

/// Input layers on the target grid.
#[derive(Debug, Clone)]
pub struct SiteInputs {
    /// Cloud-filtered median of the optical series.
    pub s2: Raster,
    /// Summer-mean radar backscatter, resampled.
    pub s1: Raster,
    /// Summer-mean GPP, resampled.
    pub gpp: Raster,
}

impl SiteInputs {
    pub fn grid(&self) -> &Grid {
        self.s2.grid()
    }

    pub fn layers(&self) -> [&Raster; 3] {
        [&self.s2, &self.s1, &self.gpp]
    }
}

pub fn prepare_inputs(scene: &SynthScene, window: DateWindow) -> Result<SiteInputs> {
    let s2 = median_composite(&scene.s2)?;
    let grid = s2.grid().clone();
    let s1 = bilinear_resample(&temporal_mean(&scene.s1, window)?, &grid)?;
    let gpp = bilinear_resample(&temporal_mean(&scene.gpp, window)?, &grid)?;
    Ok(SiteInputs { s2, s1, gpp })
}

/// Raw (unnormalized) cube for one modality subset.
pub fn build_cube(inputs: &SiteInputs, matched: &Matched, subset: ModalitySubset) -> Result<Datacube> {
    assemble(&inputs.layers(), &matched.target, &matched.mask, subset)
}

/// A synthetic site carried through the whole preparation chain.
#[derive(Debug, Clone)]
pub struct Site {
    pub scene: SynthScene,
    pub inputs: SiteInputs,
    pub footprints: FootprintSet,
    pub matched: Matched,
    /// Full-subset cube, not normalized.
    pub cube: Datacube,
}

/// Builds a synthetic site; `window` defaults to the summer of the scene year.
pub fn build_site(params: &SceneParams, window: Option<DateWindow>) -> Result<Site> {
    let scene = generate_scene(params)?;
    let inputs = prepare_inputs(&scene, window.unwrap_or(DateWindow::summer(SCENE_YEAR)))?;
    let footprints = sample_footprints(&scene.truth, params)?;
    let matched = match_footprints(&footprints, inputs.grid())?;
    let cube = build_cube(&inputs, &matched, ModalitySubset::Full)?;
    Ok(Site {
        scene,
        inputs,
        footprints,
        matched,
        cube,
    })
}

/// Parameters of a disjoint validation site: same generator settings, another seed and
/// a different location.
pub fn validation_params(training: &SceneParams) -> SceneParams {
    let offset = 10.0 * training.size as f64 * training.pixel_size;
    SceneParams {
        seed: crate::seeds::derive(training.seed, &[0x7a11d]),
        origin_x: training.origin_x + offset,
        ..training.clone()
    }
}
