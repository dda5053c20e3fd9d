//! Trained predictors, their on-disk format, and dense inference over a cube.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{Tensor, UNet, UNetConfig};
use super::tabular::{TabularModel, TabularSpec};
use super::ModelKind;
use crate::cube::{Datacube, ModalitySubset, NormStats};
use crate::error::{Error, Result};
use crate::raster::{reflect_index, tile_origins, ChannelId, Raster};

pub const ARTIFACT_MAGIC: &[u8; 8] = b"AGBMODEL";
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;
/// Overlap between neighbouring inference tiles.
pub const INFERENCE_OVERLAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the run had no held-out tiles.
    pub test_loss: Option<f64>,
}

/// Layer choices the network was built with, recorded for self-describing runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub normalization: String,
    pub activation: String,
    pub dropout: f64,
    pub output_activation: String,
    pub upsampling: String,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            normalization: "batch".into(),
            activation: "relu".into(),
            dropout: 0.0,
            output_activation: "none".into(),
            upsampling: "transposed_conv_2x2".into(),
        }
    }
}

/// UNet plus the affine map from network output to Mg C/ha.
#[derive(Debug, Clone)]
pub struct UNetPredictor {
    pub net: UNet,
    pub target_mean: f64,
    pub target_std: f64,
    /// Side of the windows used for dense inference.
    pub inference_tile: usize,
}

impl UNetPredictor {
    pub fn to_agb(&self, out: f32) -> f64 {
        out as f64 * self.target_std + self.target_mean
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    UNet(UNetPredictor),
    Tabular { spec: TabularSpec, model: TabularModel },
}

#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub predictor: Predictor,
    pub norm_stats: NormStats,
    pub modality_subset: ModalitySubset,
    pub train_seed: u64,
    pub split_seed: Option<u64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UNetHeader {
    config: UNetConfig,
    architecture: Architecture,
    target_mean: f64,
    target_std: f64,
    inference_tile: usize,
    inference_overlap: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TabularHeader {
    spec: TabularSpec,
    singular_design: bool,
    model: TabularModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    tool_version: String,
    kind: ModelKind,
    modality_subset: ModalitySubset,
    norm_stats: NormStats,
    train_seed: u64,
    split_seed: Option<u64>,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
    unet: Option<UNetHeader>,
    tabular: Option<TabularHeader>,
}

impl ModelArtifact {
    pub fn kind(&self) -> ModelKind {
        match &self.predictor {
            Predictor::UNet(_) => ModelKind::UNet,
            Predictor::Tabular { model, .. } => model.kind().into(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<u8> = Vec::new();
        let (unet, tabular) = match &self.predictor {
            Predictor::UNet(u) => {
                let tensors = u.net.named_tensors();
                for (_, t) in &tensors {
                    for v in t {
                        blob.extend_from_slice(&v.to_le_bytes());
                    }
                }
                let header = UNetHeader {
                    config: u.net.config().clone(),
                    architecture: Architecture::default(),
                    target_mean: u.target_mean,
                    target_std: u.target_std,
                    inference_tile: u.inference_tile,
                    inference_overlap: INFERENCE_OVERLAP,
                    tensors: tensors
                        .into_iter()
                        .map(|(name, t)| TensorEntry { name, len: t.len() })
                        .collect(),
                };
                (Some(header), None)
            }
            Predictor::Tabular { spec, model } => (
                None,
                Some(TabularHeader {
                    spec: spec.clone(),
                    singular_design: model.is_singular(),
                    model: model.clone(),
                }),
            ),
        };
        let header = Header {
            tool_version: crate::VERSION.to_string(),
            kind: self.kind(),
            modality_subset: self.modality_subset,
            norm_stats: self.norm_stats.clone(),
            train_seed: self.train_seed,
            split_seed: self.split_seed,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            unet,
            tabular,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(ARTIFACT_MAGIC);
        out.extend_from_slice(&ARTIFACT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason.to_string());
        if bytes.len() < 20 || &bytes[..8] != ARTIFACT_MAGIC {
            return Err(bad("not a model artifact"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ARTIFACT_FORMAT_VERSION {
            return Err(bad(&format!("unsupported artifact version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let blob = &body[hlen..];
        let predictor = match (header.kind, header.unet, header.tabular) {
            (ModelKind::UNet, Some(u), None) => {
                let total: usize = u.tensors.iter().map(|t| t.len).sum();
                if blob.len() != total * 4 {
                    return Err(bad("weight blob size does not match the header"));
                }
                let mut values = blob
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
                let tensors: Vec<Vec<f32>> = u
                    .tensors
                    .iter()
                    .map(|t| values.by_ref().take(t.len).collect())
                    .collect();
                if tensors.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(bad("non-finite weights"));
                }
                let mut net = UNet::new(u.config, 0)?;
                let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
                if names.iter().ne(u.tensors.iter().map(|t| &t.name)) {
                    return Err(bad("tensor layout does not match the architecture"));
                }
                net.load_tensors(&tensors)?;
                Predictor::UNet(UNetPredictor {
                    net,
                    target_mean: u.target_mean,
                    target_std: u.target_std,
                    inference_tile: u.inference_tile,
                })
            }
            (kind, None, Some(t)) if kind != ModelKind::UNet && ModelKind::from(t.model.kind()) == kind => {
                Predictor::Tabular {
                    spec: t.spec,
                    model: t.model,
                }
            }
            _ => return Err(bad("header kind and payload disagree")),
        };
        Ok(ModelArtifact {
            predictor,
            norm_stats: header.norm_stats,
            modality_subset: header.modality_subset,
            train_seed: header.train_seed,
            split_seed: header.split_seed,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelArtifact::from_bytes(&bytes, path)
    }

    /// Checks that `cube` has the subset and normalization the model was trained with.
    pub fn check_cube(&self, cube: &Datacube) -> Result<()> {
        if cube.subset() != self.modality_subset {
            return Err(Error::ModalityMismatch {
                artifact: self.modality_subset.to_string(),
                cube: cube.subset().to_string(),
            });
        }
        match cube.norm_stats() {
            None => Err(Error::StatsMismatch("cube is not normalized".into())),
            Some(s) if *s != self.norm_stats => Err(Error::StatsMismatch(
                "cube was normalized with different statistics than the model".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

/// `size x size` window of normalized inputs as a `1 x C x size x size` tensor. Positions
/// past the grid edge are reflected; invalid pixels read as 0 (the channel mean).
pub fn input_window(inputs: &Raster, row: usize, col: usize, size: usize) -> Tensor {
    let (h, w) = (inputs.height(), inputs.width());
    let c = inputs.n_channels();
    let n = inputs.n_pixels();
    let valid = inputs.valid_mask();
    let data = inputs.data();
    let mut out = vec![0f32; c * size * size];
    for r in 0..size {
        let sr = reflect_index((row + r) as isize, h);
        for k in 0..size {
            let i = sr * w + reflect_index((col + k) as isize, w);
            if valid[i] {
                for ch in 0..c {
                    out[ch * size * size + r * size + k] = data[ch * n + i] as f32;
                }
            }
        }
    }
    Tensor::from_vec(1, c, size, size, out)
}

/// Side and stride of the inference windows for an `h x w` grid.
pub fn inference_layout(tile: usize, multiple: usize, h: usize, w: usize) -> (usize, usize) {
    let fit = h.max(w).div_ceil(multiple) * multiple;
    let side = tile.min(fit).max(multiple);
    let stride = side.saturating_sub(INFERENCE_OVERLAP).max(side / 2).max(1);
    (side, stride)
}

/// Wall-to-wall prediction at every input-valid pixel, in Mg C/ha (not clamped).
pub fn predict_dense(artifact: &ModelArtifact, cube: &Datacube) -> Result<Raster> {
    artifact.check_cube(cube)?;
    let inputs = cube.inputs();
    let n = inputs.n_pixels();
    let valid = inputs.valid_mask().to_vec();
    let mut out = vec![f64::NAN; n];
    match &artifact.predictor {
        Predictor::Tabular { model, .. } => {
            let p = inputs.n_channels();
            out.par_chunks_mut(4096).enumerate().for_each(|(k, chunk)| {
                let mut x = vec![0.0; p];
                for (j, o) in chunk.iter_mut().enumerate() {
                    let i = k * 4096 + j;
                    if valid[i] {
                        for (c, v) in x.iter_mut().enumerate() {
                            *v = inputs.band(c)[i];
                        }
                        *o = model.predict(&x);
                    }
                }
            });
        }
        Predictor::UNet(u) => {
            let (h, w) = (inputs.height(), inputs.width());
            let (side, stride) = inference_layout(u.inference_tile, u.net.config().side_multiple(), h, w);
            let mut sum = vec![0.0f64; n];
            let mut count = vec![0u32; n];
            let mut net = u.net.clone();
            for &r0 in &tile_origins(h, side, stride) {
                for &c0 in &tile_origins(w, side, stride) {
                    let x = input_window(inputs, r0, c0, side);
                    let y = net.forward(&x, false)?;
                    for r in 0..side.min(h - r0) {
                        for c in 0..side.min(w - c0) {
                            let i = (r0 + r) * w + c0 + c;
                            sum[i] += u.to_agb(y.data[r * side + c]);
                            count[i] += 1;
                        }
                    }
                }
            }
            for i in 0..n {
                if valid[i] {
                    out[i] = sum[i] / count[i] as f64;
                }
            }
        }
    }
    if let Some(i) = (0..n).find(|&i| valid[i] && !out[i].is_finite()) {
        return Err(Error::InvalidRaster(format!("model produced a non-finite prediction at pixel {i}")));
    }
    Raster::single(cube.grid().clone(), ChannelId::agb(), out, valid)
}

/// Clamps negative predictions to zero; applied only when a map is exported.
pub fn clamp_for_export(pred: &Raster) -> Result<Raster> {
    pred.map_values(|v| v.max(0.0))
}
