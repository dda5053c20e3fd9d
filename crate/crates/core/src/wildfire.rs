//! Post-fire impact: biomass change, burn ratio, and how well they agree.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ChannelId, Modality, Raster};

/// Sums of reflectance below this make the ratio undefined.
pub const MIN_REFLECTANCE_SUM: f64 = 1e-9;

/// Lower values indicate burned surfaces.
pub const NBR_INTERPRETATION: &str = "lower NBR suggests a burned surface";

pub fn nbr_channel() -> ChannelId {
    ChannelId::new(Modality::S2, "NBR")
}

/// `(b08 - b12) / (b08 + b12)`; invalid where either band is invalid or negative, or the
/// sum is below [`MIN_REFLECTANCE_SUM`].
pub fn nbr(b08: &Raster, b12: &Raster) -> Result<Raster> {
    b08.grid().ensure_same(b12.grid())?;
    let (a, b) = (b08.band(0), b12.band(0));
    let n = a.len();
    let mut data = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if b08.valid_mask()[i] && b12.valid_mask()[i] && a[i] >= 0.0 && b[i] >= 0.0 {
            let s = a[i] + b[i];
            if s >= MIN_REFLECTANCE_SUM {
                data[i] = (a[i] - b[i]) / s;
                valid[i] = true;
            }
        }
    }
    Raster::single(b08.grid().clone(), nbr_channel(), data, valid)
}

/// Pre-fire minus post-fire NBR (high values mean severe burns).
pub fn dnbr(pre: &Raster, post: &Raster) -> Result<Raster> {
    pre.grid().ensure_same(post.grid())?;
    jointly(pre, post, ChannelId::new(Modality::S2, "dNBR"), |a, b| a - b)
}

fn jointly(a: &Raster, b: &Raster, id: ChannelId, f: impl Fn(f64, f64) -> f64) -> Result<Raster> {
    let n = a.n_pixels();
    let valid: Vec<bool> = (0..n).map(|i| a.valid_mask()[i] && b.valid_mask()[i]).collect();
    let data = (0..n)
        .map(|i| if valid[i] { f(a.band(0)[i], b.band(0)[i]) } else { f64::NAN })
        .collect();
    Raster::single(a.grid().clone(), id, data, valid)
}

/// `after - before` at jointly valid pixels, Mg C/ha.
pub fn agb_delta(after: &Raster, before: &Raster) -> Result<Raster> {
    after.grid().ensure_same(before.grid())?;
    jointly(after, before, ChannelId::new(Modality::Target, "dAGB"), |a, b| a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIndex {
    /// Post-fire NBR.
    Nbr,
    /// Pre-fire minus post-fire NBR.
    Dnbr,
}

impl fmt::Display for BurnIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BurnIndex::Nbr => "nbr",
            BurnIndex::Dnbr => "dnbr",
        })
    }
}

impl FromStr for BurnIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nbr" => Ok(BurnIndex::Nbr),
            "dnbr" => Ok(BurnIndex::Dnbr),
            _ => Err(Error::InvalidParameter(format!("unknown burn index {s:?} (nbr or dnbr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    /// Magnitude of all biomass losses, Mg C.
    pub total_loss: f64,
    /// Pearson r between the AGB change and the burn index; `None` when undefined.
    pub correlation: Option<f64>,
    pub correlation_defined: bool,
    pub n_pixels: usize,
    pub burn_index: BurnIndex,
    pub cell_area_ha: f64,
    pub interpretation: String,
}

/// Pearson correlation, `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn impact_report(delta: &Raster, index: &Raster, cell_area_ha: f64, burn_index: BurnIndex) -> Result<ImpactReport> {
    delta.grid().ensure_same(index.grid())?;
    if !(cell_area_ha > 0.0) {
        return Err(Error::InvalidParameter(format!("cell area {cell_area_ha} must be positive")));
    }
    let (d, b) = (delta.band(0), index.band(0));
    let joint: Vec<usize> = (0..d.len())
        .filter(|&i| delta.valid_mask()[i] && index.valid_mask()[i])
        .collect();
    if joint.len() < 2 {
        return Err(Error::InsufficientOverlap(joint.len()));
    }
    let total_loss = (0..d.len())
        .filter(|&i| delta.valid_mask()[i])
        .map(|i| (-d[i]).max(0.0))
        .sum::<f64>()
        * cell_area_ha;
    let x: Vec<f64> = joint.iter().map(|&i| d[i]).collect();
    let y: Vec<f64> = joint.iter().map(|&i| b[i]).collect();
    let correlation = pearson(&x, &y);
    Ok(ImpactReport {
        total_loss,
        correlation,
        correlation_defined: correlation.is_some(),
        n_pixels: joint.len(),
        burn_index,
        cell_area_ha,
        interpretation: NBR_INTERPRETATION.to_string(),
    })
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([0, 1, 2].map(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round() as u8))
}

/// Side-by-side image: AGB change (red loss, white none, green gain) next to the burn
/// index (dark brown low, green high). Invalid pixels are grey.
pub fn write_panel(path: &Path, delta: &Raster, index: &Raster) -> Result<()> {
    delta.grid().ensure_same(index.grid())?;
    let (w, h) = (delta.width() as u32, delta.height() as u32);
    let gap = 8;
    let mut img = RgbImage::from_pixel(2 * w + gap, h, Rgb([255, 255, 255]));
    let d = delta.band(0);
    let scale = (0..d.len())
        .filter(|&i| delta.valid_mask()[i])
        .map(|i| d[i].abs())
        .fold(1e-9, f64::max);
    let (b, bv) = (index.band(0), index.valid_mask());
    let (bmin, bmax) = (0..b.len())
        .filter(|&i| bv[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(b[i]), hi.max(b[i])));
    for r in 0..h {
        for c in 0..w {
            let i = (r * w + c) as usize;
            let left = if delta.valid_mask()[i] {
                let t = d[i] / scale;
                if t < 0.0 {
                    lerp([255, 255, 255], [200, 30, 30], -t)
                } else {
                    lerp([255, 255, 255], [30, 140, 50], t)
                }
            } else {
                Rgb([128, 128, 128])
            };
            let right = if bv[i] {
                lerp([80, 40, 10], [40, 170, 60], (b[i] - bmin) / (bmax - bmin).max(1e-12))
            } else {
                Rgb([128, 128, 128])
            };
            img.put_pixel(c, r, left);
            img.put_pixel(w + gap + c, r, right);
        }
    }
    img.save(path).map_err(Error::from)
}
