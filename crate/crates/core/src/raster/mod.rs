//! Georeferenced multi-channel rasters, bilinear resampling and tiling.

pub mod geotiff;
mod grid;
mod resample;
mod tile;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use geotiff::{read_geotiff, read_raster, write_geotiff, write_raster, BandStack};
pub use grid::{Grid, RowAxis};
pub use resample::bilinear_resample;
pub use tile::{reflect_index, tile, tile_origins, TileView};

use crate::error::{Error, Result};

/// Value stored at invalid pixels. Consumers must consult the validity mask instead.
pub const NODATA: f64 = f64::NAN;

/// Sentinel-2 surface-reflectance bands, in canonical order (B10 is atmospheric only).
pub const S2_BANDS: [&str; 12] = [
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12",
];
/// Sentinel-1 polarizations.
pub const S1_BANDS: [&str; 2] = ["VV", "VH"];
pub const GPP_BAND: &str = "GPP";
pub const AGB_BAND: &str = "AGB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    S1,
    S2,
    #[serde(rename = "SIF")]
    Sif,
    #[serde(rename = "TARGET")]
    Target,
    #[serde(rename = "SCL")]
    Scl,
    #[serde(rename = "ZONE")]
    Zone,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::S1 => "S1",
            Modality::S2 => "S2",
            Modality::Sif => "SIF",
            Modality::Target => "TARGET",
            Modality::Scl => "SCL",
            Modality::Zone => "ZONE",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "S1" => Modality::S1,
            "S2" => Modality::S2,
            "SIF" => Modality::Sif,
            "TARGET" => Modality::Target,
            "SCL" => Modality::Scl,
            "ZONE" => Modality::Zone,
            other => return Err(Error::InvalidParameter(format!("unknown modality {other:?}"))),
        })
    }
}

/// Identifies one channel of a raster, e.g. `S2:B08`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId {
    pub modality: Modality,
    pub band: String,
}

impl ChannelId {
    pub fn new(modality: Modality, band: impl Into<String>) -> Self {
        ChannelId {
            modality,
            band: band.into(),
        }
    }

    pub fn s2(band: &str) -> Self {
        Self::new(Modality::S2, band)
    }

    pub fn s1(band: &str) -> Self {
        Self::new(Modality::S1, band)
    }

    pub fn gpp() -> Self {
        Self::new(Modality::Sif, GPP_BAND)
    }

    pub fn agb() -> Self {
        Self::new(Modality::Target, AGB_BAND)
    }

    pub fn scl() -> Self {
        Self::new(Modality::Scl, "SCL")
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.modality.as_str(), self.band)
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (m, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("channel id {s:?} is not MODALITY:BAND")))?;
        Ok(ChannelId::new(m.parse()?, b))
    }
}

pub fn s2_channels() -> Vec<ChannelId> {
    S2_BANDS.iter().map(|b| ChannelId::s2(b)).collect()
}

pub fn s1_channels() -> Vec<ChannelId> {
    S1_BANDS.iter().map(|b| ChannelId::s1(b)).collect()
}

/// A multi-channel raster with a per-pixel validity mask.
///
/// Data is stored band-sequential (`channel * height * width + row * width + col`).
/// Invalid pixels hold [`NODATA`] in every channel; valid pixels are finite everywhere.
/// Equality compares grid, channels, mask and the values at valid pixels.
#[derive(Debug, Clone)]
pub struct Raster {
    grid: Grid,
    channels: Vec<ChannelId>,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl PartialEq for Raster {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.channels == other.channels
            && self.valid == other.valid
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl Raster {
    pub fn new(grid: Grid, channels: Vec<ChannelId>, mut data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        if channels.is_empty() {
            return Err(Error::InvalidRaster("raster needs at least one channel".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidRaster(format!("duplicate channel {c}")));
            }
        }
        if data.len() != n * channels.len() {
            return Err(Error::InvalidRaster(format!(
                "data has {} values, expected {} ({} channels x {}x{})",
                data.len(),
                n * channels.len(),
                channels.len(),
                grid.width,
                grid.height
            )));
        }
        if valid.len() != n {
            return Err(Error::InvalidRaster(format!(
                "mask has {} entries, expected {n}",
                valid.len()
            )));
        }
        for (c, band) in data.chunks_mut(n).enumerate() {
            for (i, v) in band.iter_mut().enumerate() {
                if valid[i] {
                    if !v.is_finite() {
                        return Err(Error::InvalidRaster(format!(
                            "non-finite value {v} at valid pixel {i} of channel {}",
                            channels[c]
                        )));
                    }
                } else {
                    *v = NODATA;
                }
            }
        }
        Ok(Raster {
            grid,
            channels,
            data,
            valid,
        })
    }

    /// Builds a raster whose validity is inferred: a pixel is valid iff finite in every channel.
    pub fn from_nan_encoded(grid: Grid, channels: Vec<ChannelId>, data: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if data.len() != n * channels.len() {
            return Err(Error::InvalidRaster("data length does not match grid".into()));
        }
        let valid = (0..n)
            .map(|i| (0..channels.len()).all(|c| data[c * n + i].is_finite()))
            .collect();
        Raster::new(grid, channels, data, valid)
    }

    pub fn single(grid: Grid, channel: ChannelId, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        Raster::new(grid, vec![channel], data, valid)
    }

    pub fn filled(grid: Grid, channels: Vec<ChannelId>, value: f64) -> Result<Self> {
        let n = grid.len() * channels.len();
        let valid = vec![true; grid.len()];
        Raster::new(grid, channels, vec![value; n], valid)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.len()
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, id: &ChannelId) -> Option<usize> {
        self.channels.iter().position(|c| c == id)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.grid.width + col]
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Band `c` as a row-major slice.
    pub fn band(&self, c: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[c * self.n_pixels() + row * self.grid.width + col]
    }

    /// Value of channel `c` at linear pixel index `i`, or `None` when invalid.
    pub fn value(&self, c: usize, i: usize) -> Option<f64> {
        self.valid[i].then(|| self.data[c * self.n_pixels() + i])
    }

    pub fn into_parts(self) -> (Grid, Vec<ChannelId>, Vec<f64>, Vec<bool>) {
        (self.grid, self.channels, self.data, self.valid)
    }

    /// Same data with new channel labels.
    pub fn with_channels(self, channels: Vec<ChannelId>) -> Result<Self> {
        if channels.len() != self.channels.len() {
            return Err(Error::InvalidRaster(format!(
                "relabeling {} channels with {} names",
                self.channels.len(),
                channels.len()
            )));
        }
        Raster::new(self.grid, channels, self.data, self.valid)
    }

    /// Restricts validity to `mask`; never re-validates pixels.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.n_pixels() {
            return Err(Error::ShapeMismatch("mask length differs from raster".into()));
        }
        let valid = self.valid.iter().zip(mask).map(|(a, b)| *a && *b).collect();
        Raster::new(self.grid.clone(), self.channels.clone(), self.data.clone(), valid)
    }

    /// New raster holding the listed channels, in the given order.
    pub fn select(&self, ids: &[ChannelId]) -> Result<Self> {
        let n = self.n_pixels();
        let mut data = Vec::with_capacity(n * ids.len());
        for id in ids {
            let c = self
                .channel_index(id)
                .ok_or_else(|| Error::MissingModality(id.to_string()))?;
            data.extend_from_slice(self.band(c));
        }
        Raster::new(self.grid.clone(), ids.to_vec(), data, self.valid.clone())
    }

    /// Applies `f` to every valid value of every channel.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = self.n_pixels();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, v)| if self.valid[k % n] { f(*v) } else { NODATA })
            .collect();
        Raster::new(self.grid.clone(), self.channels.clone(), data, self.valid.clone())
    }
}
