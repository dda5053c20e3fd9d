//! Footprint matching and datacube assembly, normalization, splitting and persistence.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    read_geotiff, s1_channels, s2_channels, tile_origins, write_geotiff, BandStack, ChannelId, Grid, Raster,
    NODATA,
};

/// Minimum std accepted for a channel before normalization is refused.
pub const MIN_CHANNEL_STD: f64 = 1e-12;

/// Minimum number of supervised units a split needs.
pub const MIN_SPLIT_UNITS: usize = 10;

/// A point AGB measurement (Mg C/ha).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub x: f64,
    pub y: f64,
    pub agb: f64,
    pub quality: bool,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintSet {
    pub footprints: Vec<Footprint>,
    pub crs_id: String,
}

impl FootprintSet {
    pub fn new(footprints: Vec<Footprint>, crs_id: impl Into<String>) -> Result<Self> {
        for (i, f) in footprints.iter().enumerate() {
            if !f.agb.is_finite() || f.agb < 0.0 || !f.x.is_finite() || !f.y.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "footprint {i} ({}) has agb {} at ({}, {})",
                    f.source_id, f.agb, f.x, f.y
                )));
            }
        }
        Ok(FootprintSet {
            footprints,
            crs_id: crs_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    /// Reads a `x,y,agb,quality,source_id` CSV. The file carries no CRS, so the caller
    /// supplies it.
    pub fn read_csv(path: &Path, crs_id: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
        let mut fps = Vec::new();
        for row in rdr.deserialize() {
            fps.push(row?);
        }
        FootprintSet::new(fps, crs_id)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
        for f in &self.footprints {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Footprint bookkeeping from one matching pass; `assigned + out_of_bounds + rejected == total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchStats {
    pub total: usize,
    pub assigned: usize,
    pub out_of_bounds: usize,
    /// Footprints dropped by the quality flag before matching.
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Matched {
    /// Single-channel AGB raster, valid exactly where `mask` is true.
    pub target: Raster,
    pub mask: Vec<bool>,
    pub stats: MatchStats,
}

/// Averages quality footprints into the grid cells that contain them.
pub fn match_footprints(fps: &FootprintSet, grid: &Grid) -> Result<Matched> {
    if fps.crs_id != grid.crs_id {
        return Err(Error::CrsMismatch(fps.crs_id.clone(), grid.crs_id.clone()));
    }
    let n = grid.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    let mut stats = MatchStats {
        total: fps.len(),
        assigned: 0,
        out_of_bounds: 0,
        rejected: 0,
    };
    for f in &fps.footprints {
        if !f.quality {
            stats.rejected += 1;
            continue;
        }
        match grid.cell_of(f.x, f.y) {
            Some((r, c)) => {
                let i = r * grid.width + c;
                sum[i] += f.agb;
                count[i] += 1;
                stats.assigned += 1;
            }
            None => stats.out_of_bounds += 1,
        }
    }
    let mask: Vec<bool> = count.iter().map(|c| *c > 0).collect();
    let data = sum
        .iter()
        .zip(&count)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { NODATA })
        .collect();
    let target = Raster::single(grid.clone(), ChannelId::agb(), data, mask.clone())?;
    Ok(Matched { target, mask, stats })
}

/// Which input modalities a cube stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModalitySubset {
    #[serde(rename = "SIF/S1/S2")]
    Full,
    #[serde(rename = "S1/S2")]
    S1S2,
    #[serde(rename = "S2-only")]
    S2Only,
}

impl ModalitySubset {
    pub const ALL: [ModalitySubset; 3] = [ModalitySubset::Full, ModalitySubset::S1S2, ModalitySubset::S2Only];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalitySubset::Full => "SIF/S1/S2",
            ModalitySubset::S1S2 => "S1/S2",
            ModalitySubset::S2Only => "S2-only",
        }
    }

    /// Canonical channel order: S1 VV, VH, the 12 S2 bands, then GPP.
    pub fn channels(self) -> Vec<ChannelId> {
        let mut out = Vec::with_capacity(15);
        if self != ModalitySubset::S2Only {
            out.extend(s1_channels());
        }
        out.extend(s2_channels());
        if self == ModalitySubset::Full {
            out.push(ChannelId::gpp());
        }
        out
    }

    pub fn n_channels(self) -> usize {
        match self {
            ModalitySubset::Full => 15,
            ModalitySubset::S1S2 => 14,
            ModalitySubset::S2Only => 12,
        }
    }
}

impl fmt::Display for ModalitySubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalitySubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sif/s1/s2" | "full" | "sif-s1-s2" => Ok(ModalitySubset::Full),
            "s1/s2" | "s1-s2" => Ok(ModalitySubset::S1S2),
            "s2-only" | "s2" => Ok(ModalitySubset::S2Only),
            _ => Err(Error::InvalidParameter(format!(
                "unknown modality subset {s:?} (expected SIF/S1/S2, S1/S2 or S2-only)"
            ))),
        }
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and std of every channel over the raster's valid pixels.
    pub fn compute(inputs: &Raster) -> Result<Self> {
        let valid = inputs.valid_mask();
        let n_valid = inputs.n_valid();
        if n_valid < 2 {
            return Err(Error::InsufficientData(format!(
                "normalization needs 2 valid pixels, found {n_valid}"
            )));
        }
        let mut mean = Vec::with_capacity(inputs.n_channels());
        let mut std = Vec::with_capacity(inputs.n_channels());
        for (c, id) in inputs.channels().iter().enumerate() {
            let band = inputs.band(c);
            let m = band
                .iter()
                .zip(valid)
                .filter(|(_, v)| **v)
                .map(|(x, _)| x)
                .sum::<f64>()
                / n_valid as f64;
            let var = band
                .iter()
                .zip(valid)
                .filter(|(_, v)| **v)
                .map(|(x, _)| (x - m) * (x - m))
                .sum::<f64>()
                / n_valid as f64;
            let s = var.sqrt();
            if s < MIN_CHANNEL_STD {
                return Err(Error::DegenerateChannel {
                    channel: id.to_string(),
                    std: s,
                });
            }
            mean.push(m);
            std.push(s);
        }
        Ok(NormStats {
            channels: inputs.channels().iter().map(|c| c.to_string()).collect(),
            mean,
            std,
        })
    }

    fn check_channels(&self, inputs: &Raster) -> Result<()> {
        let names: Vec<String> = inputs.channels().iter().map(|c| c.to_string()).collect();
        if names != self.channels {
            return Err(Error::StatsMismatch(format!(
                "statistics cover {:?}, cube holds {:?}",
                self.channels, names
            )));
        }
        for (c, s) in self.std.iter().enumerate() {
            if *s < MIN_CHANNEL_STD {
                return Err(Error::DegenerateChannel {
                    channel: self.channels[c].clone(),
                    std: *s,
                });
            }
        }
        Ok(())
    }
}

/// Stacked inputs plus sparse AGB supervision on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Datacube {
    inputs: Raster,
    target: Raster,
    target_mask: Vec<bool>,
    norm_stats: Option<NormStats>,
    subset: ModalitySubset,
    split_seed: Option<u64>,
}

impl Datacube {
    /// Checks every invariant; `target_mask` is reduced to pixels where both the inputs
    /// and the target are valid.
    pub fn from_parts(
        inputs: Raster,
        target: Raster,
        target_mask: &[bool],
        subset: ModalitySubset,
        norm_stats: Option<NormStats>,
    ) -> Result<Self> {
        inputs.grid().ensure_same(target.grid())?;
        if inputs.channels() != subset.channels().as_slice() {
            return Err(Error::MissingModality(format!(
                "cube channels {:?} do not match subset {subset}",
                inputs.channels().iter().map(|c| c.to_string()).collect::<Vec<_>>()
            )));
        }
        if target.n_channels() != 1 {
            return Err(Error::InvalidRaster("target must have exactly one channel".into()));
        }
        if target_mask.len() != inputs.n_pixels() {
            return Err(Error::ShapeMismatch("target mask does not match the grid".into()));
        }
        let mask: Vec<bool> = (0..inputs.n_pixels())
            .map(|i| target_mask[i] && inputs.valid_mask()[i] && target.valid_mask()[i])
            .collect();
        let target = target.masked(&mask)?;
        Ok(Datacube {
            inputs,
            target,
            target_mask: mask,
            norm_stats,
            subset,
            split_seed: None,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.inputs.grid()
    }

    pub fn inputs(&self) -> &Raster {
        &self.inputs
    }

    pub fn target(&self) -> &Raster {
        &self.target
    }

    /// Supervised pixels: footprint present and every input valid.
    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    pub fn n_supervised(&self) -> usize {
        self.target_mask.iter().filter(|m| **m).count()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn subset(&self) -> ModalitySubset {
        self.subset
    }

    pub fn split_seed(&self) -> Option<u64> {
        self.split_seed
    }

    pub fn set_split_seed(&mut self, seed: Option<u64>) {
        self.split_seed = seed;
    }

    /// Target value at pixel `i` when supervised.
    pub fn target_at(&self, i: usize) -> Option<f64> {
        self.target_mask[i].then(|| self.target.band(0)[i])
    }

    /// Same cube restricted to another modality subset (channels dropped, stats sliced).
    pub fn restrict(&self, subset: ModalitySubset) -> Result<Datacube> {
        let ids = subset.channels();
        let full_valid = self.inputs.valid_mask();
        let inputs = self.inputs.select(&ids)?;
        debug_assert_eq!(inputs.valid_mask(), full_valid);
        let stats = self.norm_stats.as_ref().map(|s| {
            let idx: Vec<usize> = ids
                .iter()
                .map(|id| s.channels.iter().position(|c| *c == id.to_string()).unwrap())
                .collect();
            NormStats {
                channels: idx.iter().map(|&i| s.channels[i].clone()).collect(),
                mean: idx.iter().map(|&i| s.mean[i]).collect(),
                std: idx.iter().map(|&i| s.std[i]).collect(),
            }
        });
        let mut cube = Datacube::from_parts(inputs, self.target.clone(), &self.target_mask, subset, stats)?;
        cube.split_seed = self.split_seed;
        Ok(cube)
    }
}

/// Stacks the subset's channels (canonical order) from any number of input rasters.
///
/// A pixel is input-valid iff every raster contributing a selected channel is valid there;
/// a pixel is supervised iff `mask` is true there and it is input-valid.
pub fn assemble(inputs: &[&Raster], target: &Raster, mask: &[bool], subset: ModalitySubset) -> Result<Datacube> {
    let grid = target.grid();
    for r in inputs {
        if r.grid().crs_id != grid.crs_id {
            return Err(Error::CrsMismatch(r.grid().crs_id.clone(), grid.crs_id.clone()));
        }
        if r.grid() != grid {
            return Err(Error::GridMismatch(format!(
                "input with channels {:?} is not on the target grid",
                r.channels().iter().map(|c| c.to_string()).collect::<Vec<_>>()
            )));
        }
    }
    let ids = subset.channels();
    let n = grid.len();
    let mut data = Vec::with_capacity(n * ids.len());
    let mut valid = vec![true; n];
    for id in &ids {
        let (r, c) = inputs
            .iter()
            .find_map(|r| r.channel_index(id).map(|c| (r, c)))
            .ok_or_else(|| Error::MissingModality(id.to_string()))?;
        data.extend_from_slice(r.band(c));
        for (v, rv) in valid.iter_mut().zip(r.valid_mask()) {
            *v &= rv;
        }
    }
    let stacked = Raster::new(grid.clone(), ids, data, valid)?;
    Datacube::from_parts(stacked, target.clone(), mask, subset, None)
}

/// Z-scores the inputs with `stats`, or with statistics computed from the cube's own valid
/// pixels when `stats` is `None`. The target is never touched.
pub fn normalize(cube: &Datacube, stats: Option<&NormStats>) -> Result<Datacube> {
    let stats = match stats {
        Some(s) => {
            s.check_channels(&cube.inputs)?;
            s.clone()
        }
        None => NormStats::compute(&cube.inputs)?,
    };
    let n = cube.inputs.n_pixels();
    let valid = cube.inputs.valid_mask();
    let mut data = cube.inputs.data().to_vec();
    for (c, band) in data.chunks_mut(n).enumerate() {
        for (i, v) in band.iter_mut().enumerate() {
            if valid[i] {
                *v = (*v - stats.mean[c]) / stats.std[c];
            }
        }
    }
    let inputs = Raster::new(cube.grid().clone(), cube.inputs.channels().to_vec(), data, valid.to_vec())?;
    Ok(Datacube {
        inputs,
        norm_stats: Some(stats),
        ..cube.clone()
    })
}

/// Inverse of [`normalize`] using the cube's recorded statistics.
pub fn denormalize(cube: &Datacube) -> Result<Datacube> {
    let stats = cube
        .norm_stats
        .as_ref()
        .ok_or_else(|| Error::StatsMismatch("cube is not normalized".into()))?;
    let n = cube.inputs.n_pixels();
    let valid = cube.inputs.valid_mask();
    let mut data = cube.inputs.data().to_vec();
    for (c, band) in data.chunks_mut(n).enumerate() {
        for (i, v) in band.iter_mut().enumerate() {
            if valid[i] {
                *v = *v * stats.std[c] + stats.mean[c];
            }
        }
    }
    let inputs = Raster::new(cube.grid().clone(), cube.inputs.channels().to_vec(), data, valid.to_vec())?;
    Ok(Datacube {
        inputs,
        norm_stats: None,
        ..cube.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    Pixel,
    Tile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub unit: SplitUnit,
    pub seed: u64,
    /// Side of the square, non-overlapping split tiles (tile unit only).
    pub tile_size: usize,
}

impl SplitSpec {
    pub fn pixels(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.9,
            unit: SplitUnit::Pixel,
            seed,
            tile_size: 0,
        }
    }

    pub fn tiles(seed: u64, tile_size: usize) -> Self {
        SplitSpec {
            train_fraction: 0.9,
            unit: SplitUnit::Tile,
            seed,
            tile_size,
        }
    }
}

/// A square window of the grid; pixels past the grid edge are reflection padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileWindow {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl TileWindow {
    /// Linear indices of the grid pixels the window covers (padding excluded).
    pub fn pixels(&self, grid: &Grid) -> impl Iterator<Item = usize> + '_ {
        let rows = self.row..(self.row + self.size).min(grid.height);
        let cols = self.col..(self.col + self.size).min(grid.width);
        let w = grid.width;
        rows.flat_map(move |r| cols.clone().map(move |c| r * w + c))
    }
}

/// Non-overlapping windows covering a grid, row-major.
pub fn split_tiles(grid: &Grid, tile_size: usize) -> Vec<TileWindow> {
    let rows = tile_origins(grid.height, tile_size, tile_size);
    let cols = tile_origins(grid.width, tile_size, tile_size);
    rows.iter()
        .flat_map(|&row| {
            cols.iter().map(move |&col| TileWindow {
                row,
                col,
                size: tile_size,
            })
        })
        .collect()
}

/// Membership of a train/test partition. Units are sorted ascending on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub spec: SplitSpec,
    /// Pixel indices (pixel unit) or indices into `tiles` (tile unit).
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub tiles: Vec<TileWindow>,
}

impl Split {
    /// Per-pixel supervision masks for the two sides.
    pub fn masks(&self, cube: &Datacube) -> (Vec<bool>, Vec<bool>) {
        let n = cube.grid().len();
        let sup = cube.target_mask();
        let mut train = vec![false; n];
        let mut test = vec![false; n];
        for (units, out) in [(&self.train, &mut train), (&self.test, &mut test)] {
            for &u in units.iter() {
                match self.spec.unit {
                    SplitUnit::Pixel => out[u] = true,
                    SplitUnit::Tile => {
                        for i in self.tiles[u].pixels(cube.grid()) {
                            out[i] = sup[i];
                        }
                    }
                }
            }
        }
        (train, test)
    }

    pub fn train_tiles(&self) -> Vec<TileWindow> {
        self.train.iter().map(|&u| self.tiles[u]).collect()
    }

    pub fn test_tiles(&self) -> Vec<TileWindow> {
        self.test.iter().map(|&u| self.tiles[u]).collect()
    }
}

/// Supervised units of a cube: pixel indices, or indices of split tiles holding supervision.
pub fn split_units(cube: &Datacube, unit: SplitUnit, tile_size: usize) -> Result<(Vec<usize>, Vec<TileWindow>)> {
    match unit {
        SplitUnit::Pixel => Ok((
            (0..cube.grid().len()).filter(|&i| cube.target_mask()[i]).collect(),
            Vec::new(),
        )),
        SplitUnit::Tile => {
            if tile_size == 0 {
                return Err(Error::InvalidParameter("tile split needs tile_size >= 1".into()));
            }
            let tiles = split_tiles(cube.grid(), tile_size);
            let sup = cube.target_mask();
            let units = (0..tiles.len())
                .filter(|&t| tiles[t].pixels(cube.grid()).any(|i| sup[i]))
                .collect();
            Ok((units, tiles))
        }
    }
}

/// Number of training units for a partition of `n` units.
pub fn n_train_units(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded shuffle-and-cut partition of `units`.
pub fn partition(units: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = units.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = n_train_units(units.len(), train_fraction);
    let mut train = shuffled[..k].to_vec();
    let mut test = shuffled[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Deterministic train/test split of the cube's supervised units.
pub fn split(cube: &Datacube, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let (units, tiles) = split_units(cube, spec.unit, spec.tile_size)?;
    if units.len() < MIN_SPLIT_UNITS {
        return Err(Error::TooFewUnits {
            needed: MIN_SPLIT_UNITS,
            found: units.len(),
        });
    }
    let (train, test) = partition(&units, spec.train_fraction, spec.seed);
    Ok(Split {
        spec: *spec,
        train,
        test,
        tiles,
    })
}

/// JSON sidecar stored next to a cube GeoTIFF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeSidecar {
    pub channels: Vec<String>,
    pub target_band: String,
    pub modality_subset: ModalitySubset,
    pub norm_stats: Option<NormStats>,
    pub split_seed: Option<u64>,
}

pub fn sidecar_path(tif: &Path) -> PathBuf {
    tif.with_extension("json")
}

/// Writes `cube.tif` (inputs then AGB, NaN where unsupervised) and its JSON sidecar.
pub fn write_cube(path: &Path, cube: &Datacube) -> Result<()> {
    let mut stack = BandStack::from_raster(cube.inputs());
    stack.names.push(ChannelId::agb().to_string());
    stack.bands.push(
        (0..cube.grid().len())
            .map(|i| cube.target_at(i).unwrap_or(NODATA))
            .collect(),
    );
    write_geotiff(path, &stack)?;
    let sidecar = CubeSidecar {
        channels: cube.inputs().channels().iter().map(|c| c.to_string()).collect(),
        target_band: ChannelId::agb().to_string(),
        modality_subset: cube.subset,
        norm_stats: cube.norm_stats.clone(),
        split_seed: cube.split_seed,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_cube(path: &Path) -> Result<Datacube> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: CubeSidecar = serde_json::from_str(&text)?;
    let stack = read_geotiff(path)?;
    let t = stack
        .band_index(&sidecar.target_band)
        .ok_or_else(|| Error::format(path, "cube has no target band"))?;
    let mut inputs = stack.clone();
    inputs.names.remove(t);
    let target_band = inputs.bands.remove(t);
    if inputs.names != sidecar.channels {
        return Err(Error::format(path, "band names disagree with the sidecar"));
    }
    let inputs = inputs.to_raster()?;
    let mask: Vec<bool> = target_band.iter().map(|v| v.is_finite()).collect();
    let target = Raster::from_nan_encoded(stack.grid.clone(), vec![ChannelId::agb()], target_band)?;
    let mut cube = Datacube::from_parts(inputs, target, &mask, sidecar.modality_subset, sidecar.norm_stats)?;
    cube.split_seed = sidecar.split_seed;
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> Grid {
        Grid::new(0.0, 0.0, 30.0, w, h, "EPSG:5070").unwrap()
    }

    fn fp(x: f64, y: f64, agb: f64) -> Footprint {
        Footprint {
            x,
            y,
            agb,
            quality: true,
            source_id: "t".into(),
        }
    }

    fn center(g: &Grid, r: usize, c: usize) -> (f64, f64) {
        g.pixel_to_world(c as f64, r as f64)
    }

    #[test]
    fn single_footprint_at_cell_center() {
        let g = grid(10, 10);
        let (x, y) = center(&g, 3, 5);
        let m = match_footprints(&FootprintSet::new(vec![fp(x, y, 120.0)], "EPSG:5070").unwrap(), &g).unwrap();
        assert_eq!(m.target.get(0, 3, 5), 120.0);
        assert_eq!(m.mask.iter().filter(|v| **v).count(), 1);
        assert!(m.mask[3 * 10 + 5]);
    }

    #[test]
    fn collisions_average() {
        let g = grid(4, 4);
        let (x, y) = center(&g, 1, 1);
        let set = FootprintSet::new(vec![fp(x - 5.0, y, 100.0), fp(x + 5.0, y + 5.0, 140.0)], "EPSG:5070").unwrap();
        let m = match_footprints(&set, &g).unwrap();
        assert_eq!(m.target.get(0, 1, 1), 120.0);
    }

    #[test]
    fn out_of_bounds_and_quality_accounting() {
        let g = grid(4, 4);
        let mut bad = fp(15.0, -15.0, 10.0);
        bad.quality = false;
        let set = FootprintSet::new(vec![fp(15.0, -15.0, 1.0), fp(-1.0, 0.0, 1.0), bad], "EPSG:5070").unwrap();
        let m = match_footprints(&set, &g).unwrap();
        assert_eq!(
            m.stats,
            MatchStats {
                total: 3,
                assigned: 1,
                out_of_bounds: 1,
                rejected: 1
            }
        );
        let other = FootprintSet::new(vec![], "EPSG:4326").unwrap();
        assert!(matches!(match_footprints(&other, &g), Err(Error::CrsMismatch(..))));
    }

    #[test]
    fn footprint_validation() {
        assert!(FootprintSet::new(vec![fp(0.0, 0.0, -1.0)], "c").is_err());
        assert!(FootprintSet::new(vec![fp(0.0, 0.0, f64::NAN)], "c").is_err());
    }

    #[test]
    fn footprint_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut b = fp(1.5, -2.25, 3.0);
        b.quality = false;
        b.source_id = "plot,7".into();
        let set = FootprintSet::new(vec![fp(0.1, 0.2, 0.3), b], "EPSG:5070").unwrap();
        set.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,y,agb,quality,source_id\n"));
        assert_eq!(FootprintSet::read_csv(&p, "EPSG:5070").unwrap(), set);
    }

    fn inputs(g: &Grid, subset: ModalitySubset, seed: f64) -> Raster {
        let ids = subset.channels();
        let n = g.len();
        let data = (0..ids.len() * n).map(|k| (k as f64 * 0.37 + seed).sin()).collect();
        Raster::new(g.clone(), ids, data, vec![true; n]).unwrap()
    }

    fn split_modalities(g: &Grid) -> (Raster, Raster, Raster) {
        let full = inputs(g, ModalitySubset::Full, 0.0);
        (
            full.select(&s1_channels()).unwrap(),
            full.select(&s2_channels()).unwrap(),
            full.select(&[ChannelId::gpp()]).unwrap(),
        )
    }

    #[test]
    fn assemble_channel_counts() {
        let g = grid(4, 4);
        let (s1, s2, gpp) = split_modalities(&g);
        let t = Raster::filled(g.clone(), vec![ChannelId::agb()], 50.0).unwrap();
        let mask = vec![true; 16];
        let full = assemble(&[&s1, &s2, &gpp], &t, &mask, ModalitySubset::Full).unwrap();
        assert_eq!(full.inputs().n_channels(), 15);
        let s2only = assemble(&[&s1, &s2, &gpp], &t, &mask, ModalitySubset::S2Only).unwrap();
        assert_eq!(s2only.inputs().n_channels(), 12);
        let reordered = assemble(&[&gpp, &s2, &s1], &t, &mask, ModalitySubset::Full).unwrap();
        assert_eq!(reordered, full);
        assert!(matches!(
            assemble(&[&s2], &t, &mask, ModalitySubset::S1S2),
            Err(Error::MissingModality(_))
        ));
    }

    #[test]
    fn invalid_gpp_pixel_is_not_supervised() {
        let g = grid(2, 1);
        let (s1, s2, _) = split_modalities(&g);
        let gpp = Raster::single(g.clone(), ChannelId::gpp(), vec![1.0, 2.0], vec![false, true]).unwrap();
        let t = Raster::filled(g.clone(), vec![ChannelId::agb()], 50.0).unwrap();
        let full = assemble(&[&s1, &s2, &gpp], &t, &[true, true], ModalitySubset::Full).unwrap();
        assert_eq!(full.target_mask(), &[false, true]);
        let s1s2 = assemble(&[&s1, &s2, &gpp], &t, &[true, true], ModalitySubset::S1S2).unwrap();
        assert_eq!(s1s2.target_mask(), &[true, true]);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let g = grid(2, 2);
        let (s1, s2, gpp) = split_modalities(&g);
        let t = Raster::filled(grid(3, 2), vec![ChannelId::agb()], 1.0).unwrap();
        assert!(matches!(
            assemble(&[&s1, &s2, &gpp], &t, &[true; 6], ModalitySubset::Full),
            Err(Error::GridMismatch(_))
        ));
    }

    fn one_channel_cube(values: &[f64]) -> Datacube {
        let g = grid(values.len(), 1);
        let full = inputs(&g, ModalitySubset::S2Only, 0.0);
        let n = values.len();
        let mut data = full.data().to_vec();
        data[..n].copy_from_slice(values);
        let r = Raster::new(g.clone(), full.channels().to_vec(), data, vec![true; n]).unwrap();
        let t = Raster::filled(g, vec![ChannelId::agb()], 1.0).unwrap();
        assemble(&[&r], &t, &vec![true; n], ModalitySubset::S2Only).unwrap()
    }

    #[test]
    fn zscore_by_hand() {
        let c = normalize(&one_channel_cube(&[0.0, 10.0]), None).unwrap();
        assert_eq!(&c.inputs().band(0)[..2], &[-1.0, 1.0]);
        assert_eq!(c.norm_stats().unwrap().mean[0], 5.0);
        assert_eq!(c.norm_stats().unwrap().std[0], 5.0);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let err = normalize(&one_channel_cube(&[3.0, 3.0, 3.0]), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateChannel { ref channel, .. } if channel == "S2:B01"));
    }

    #[test]
    fn normalize_roundtrip_and_not_idempotent() {
        let raw = one_channel_cube(&[1.0, 4.0, 9.0, -2.0]);
        let once = normalize(&raw, None).unwrap();
        let stats = once.norm_stats().unwrap().clone();
        let twice = normalize(&once, Some(&stats)).unwrap();
        assert_ne!(twice.inputs().data(), once.inputs().data());
        let back = denormalize(&once).unwrap();
        for (a, b) in back.inputs().data().iter().zip(raw.inputs().data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(back.target(), raw.target());
    }

    fn cube_with_supervision(w: usize, h: usize, sup: &[usize]) -> Datacube {
        let g = grid(w, h);
        let r = inputs(&g, ModalitySubset::S2Only, 1.0);
        let t = Raster::filled(g.clone(), vec![ChannelId::agb()], 7.0).unwrap();
        let mut mask = vec![false; g.len()];
        for &i in sup {
            mask[i] = true;
        }
        assemble(&[&r], &t, &mask, ModalitySubset::S2Only).unwrap()
    }

    #[test]
    fn pixel_split_is_ninety_ten() {
        let cube = cube_with_supervision(20, 10, &(0..200).step_by(2).collect::<Vec<_>>());
        let s = split(&cube, &SplitSpec::pixels(3)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (90, 10));
        let again = split(&cube, &SplitSpec::pixels(3)).unwrap();
        assert_eq!(s, again);
        let other = split(&cube, &SplitSpec::pixels(4)).unwrap();
        assert_ne!(s.test, other.test);
    }

    #[test]
    fn tile_split_nine_one() {
        // 10 tiles of 4x4 in a 20x8 grid, one supervised pixel each.
        let sup: Vec<usize> = (0..10).map(|t| (t / 5) * 4 * 20 + (t % 5) * 4).collect();
        let cube = cube_with_supervision(20, 8, &sup);
        let s = split(&cube, &SplitSpec::tiles(1, 4)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
        let (tr, te) = s.masks(&cube);
        assert_eq!(tr.iter().filter(|v| **v).count(), 9);
        assert_eq!(te.iter().filter(|v| **v).count(), 1);
        assert!(tr.iter().zip(&te).all(|(a, b)| !(a & b)));
    }

    #[test]
    fn too_few_units() {
        let cube = cube_with_supervision(4, 4, &[0, 1, 2]);
        assert!(matches!(
            split(&cube, &SplitSpec::pixels(0)),
            Err(Error::TooFewUnits { needed: 10, found: 3 })
        ));
    }

    #[test]
    fn cube_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cube.tif");
        let mut cube = normalize(&cube_with_supervision(6, 5, &[0, 7, 29]), None).unwrap();
        cube.set_split_seed(Some(11));
        write_cube(&p, &cube).unwrap();
        assert!(sidecar_path(&p).exists());
        assert_eq!(read_cube(&p).unwrap(), cube);
    }

    #[test]
    fn restrict_drops_channels_and_stats() {
        let g = grid(3, 3);
        let (s1, s2, gpp) = split_modalities(&g);
        let t = Raster::filled(g.clone(), vec![ChannelId::agb()], 5.0).unwrap();
        let full = normalize(&assemble(&[&s1, &s2, &gpp], &t, &[true; 9], ModalitySubset::Full).unwrap(), None).unwrap();
        let s2only = full.restrict(ModalitySubset::S2Only).unwrap();
        assert_eq!(s2only.inputs().n_channels(), 12);
        assert_eq!(s2only.norm_stats().unwrap().mean[0], full.norm_stats().unwrap().mean[2]);
    }
}
