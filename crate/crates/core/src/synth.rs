//! Synthetic landscapes with known AGB: smooth biomass fields, optical/radar/GPP series
//! derived from them, cloud cover and track-patterned footprints.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compositing::SceneSeries;
use crate::cube::{Footprint, FootprintSet};
use crate::error::{Error, Result};
use crate::raster::{s1_channels, s2_channels, ChannelId, Grid, Raster, RowAxis, S2_BANDS};

/// `(base, amplitude, e-folding AGB)` of each S2 band, in canonical band order. Band value
/// is `base + amplitude * (1 - exp(-agb / scale))`.
const S2_RESPONSE: [(f64, f64, f64); 12] = [
    (0.12, -0.05, 100.0),
    (0.10, -0.06, 90.0),
    (0.12, -0.05, 110.0),
    (0.16, -0.13, 90.0),
    (0.18, -0.04, 120.0),
    (0.20, 0.10, 130.0),
    (0.21, 0.16, 140.0),
    (0.22, 0.20, 150.0),
    (0.23, 0.19, 160.0),
    (0.08, 0.05, 150.0),
    (0.28, -0.12, 120.0),
    (0.22, -0.14, 100.0),
];

/// `(base dB, amplitude dB, e-folding AGB)` for VV and VH backscatter.
const S1_RESPONSE: [(f64, f64, f64); 2] = [(-14.0, 6.0, 50.0), (-22.0, 8.0, 70.0)];

const GPP_BASE: f64 = 1.0;
const GPP_PER_AGB: f64 = 0.03;
/// Month and relative seasonal amplitude of the monthly GPP scenes.
const GPP_MONTHS: [(u32, f64); 6] = [(4, 0.5), (5, 0.8), (6, 1.0), (7, 1.1), (8, 1.0), (9, 0.7)];
const S2_DATES: [(u32, u32); 5] = [(6, 5), (6, 25), (7, 15), (8, 4), (8, 24)];
const S1_DATES: [(u32, u32); 3] = [(6, 10), (7, 10), (8, 10)];
pub const SCENE_YEAR: i32 = 2021;

/// Index of the near-infrared band in the S2 band list.
pub const NIR_BAND: usize = 7;
/// Index of the red band in the S2 band list.
pub const RED_BAND: usize = 3;

fn default_crs() -> String {
    "EPSG:5070".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub size: usize,
    pub seed: u64,
    /// `[lo, hi]` of the AGB field, Mg C/ha.
    pub agb_range: [f64; 2],
    pub s2_noise: f64,
    pub s1_noise: f64,
    pub gpp_noise: f64,
    pub gpp_informative: bool,
    pub cloud_fraction: f64,
    /// Footprints per 1000 pixels.
    pub footprint_density: f64,
    pub footprint_noise: f64,
    /// Distance between ground tracks in pixels; by default ten times the along-track
    /// spacing.
    pub across_track_spacing: Option<f64>,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    #[serde(default = "default_crs")]
    pub crs_id: String,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            size: 512,
            seed: 7,
            agb_range: [0.0, 300.0],
            s2_noise: 0.1,
            s1_noise: 3.0,
            gpp_noise: 0.9,
            gpp_informative: true,
            cloud_fraction: 0.3,
            footprint_density: 4.0,
            footprint_noise: 5.0,
            across_track_spacing: None,
            pixel_size: 30.0,
            origin_x: 500_000.0,
            origin_y: 2_000_000.0,
            crs_id: default_crs(),
        }
    }
}

impl SceneParams {
    /// Lists every violated constraint at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.size < 2 {
            problems.push(format!("size must be >= 2 (got {})", self.size));
        }
        let [lo, hi] = self.agb_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            problems.push(format!("agb_range must satisfy 0 <= lo <= hi (got [{lo}, {hi}])"));
        }
        for (name, v) in [
            ("s2_noise", self.s2_noise),
            ("s1_noise", self.s1_noise),
            ("gpp_noise", self.gpp_noise),
            ("footprint_noise", self.footprint_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be >= 0 (got {v})"));
            }
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            problems.push(format!("cloud_fraction must lie in [0, 1] (got {})", self.cloud_fraction));
        }
        if !(self.footprint_density.is_finite() && self.footprint_density >= 0.0) {
            problems.push(format!("footprint_density must be >= 0 (got {})", self.footprint_density));
        }
        if let Some(s) = self.across_track_spacing {
            if !(s.is_finite() && s >= 1.0) {
                problems.push(format!("across_track_spacing must be >= 1 (got {s})"));
            }
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            problems.push(format!("pixel_size must be > 0 (got {})", self.pixel_size));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    pub fn grid(&self) -> Grid {
        Grid {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size_x: self.pixel_size,
            pixel_size_y: self.pixel_size,
            row_axis: RowAxis::NorthUp,
            width: self.size,
            height: self.size,
            crs_id: self.crs_id.clone(),
        }
    }

    /// Expected number of footprints on the scene.
    pub fn expected_footprints(&self) -> f64 {
        self.footprint_density / 1000.0 * (self.size * self.size) as f64
    }
}

/// Independent random stream per scene component, so changing one component's draws
/// never shifts another's.
fn stream(seed: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(component);
    rng
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    row: f64,
    col: f64,
    sigma: f64,
    amp: f64,
}

/// Sum of Gaussian bumps evaluated at fractional pixel coordinates of the scene grid.
#[derive(Debug, Clone)]
struct BumpField {
    bumps: Vec<Bump>,
}

impl BumpField {
    fn random(rng: &mut ChaCha8Rng, size: usize, n: usize, sigma: (f64, f64)) -> Self {
        let bumps = (0..n)
            .map(|_| {
                let s = rng.gen_range(sigma.0..=sigma.1);
                Bump {
                    row: rng.gen_range(-2.0 * s..size as f64 + 2.0 * s),
                    col: rng.gen_range(-2.0 * s..size as f64 + 2.0 * s),
                    sigma: s,
                    amp: rng.gen_range(0.2..1.0),
                }
            })
            .collect();
        BumpField { bumps }
    }

    /// Bumps centered uniformly on a `size`-periodic square, copied onto the eight
    /// neighbouring periods so the rendered field wraps around and has no edge bias.
    fn periodic(rng: &mut ChaCha8Rng, size: usize, n: usize, sigma: (f64, f64)) -> Self {
        let s = size as f64;
        let mut bumps = Vec::with_capacity(9 * n);
        for _ in 0..n {
            let sigma = rng.gen_range(sigma.0..=sigma.1);
            let (row, col, amp) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(0.2..1.0));
            for dr in [-s, 0.0, s] {
                for dc in [-s, 0.0, s] {
                    bumps.push(Bump {
                        row: row + dr,
                        col: col + dc,
                        sigma,
                        amp,
                    });
                }
            }
        }
        BumpField { bumps }
    }

    /// Values on a lattice of `rows x cols` points at `(row0 + i*step, col0 + j*step)`.
    fn render(&self, rows: usize, cols: usize, row0: f64, col0: f64, step: f64) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for b in &self.bumps {
            let reach = 4.0 * b.sigma;
            let lo = |c: f64, o: f64| (((c - reach - o) / step).ceil().max(0.0)) as usize;
            let hi = |c: f64, o: f64, n: usize| ((((c + reach - o) / step).floor() + 1.0).max(0.0) as usize).min(n);
            let (r_lo, r_hi) = (lo(b.row, row0), hi(b.row, row0, rows));
            let (c_lo, c_hi) = (lo(b.col, col0), hi(b.col, col0, cols));
            let inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for i in r_lo..r_hi {
                let dr = row0 + i as f64 * step - b.row;
                let er = (-dr * dr * inv).exp();
                for j in c_lo..c_hi {
                    let dc = col0 + j as f64 * step - b.col;
                    out[i * cols + j] += b.amp * er * (-dc * dc * inv).exp();
                }
            }
        }
        out
    }
}

/// The AGB field: raw bump sum affinely mapped so the scene grid spans `agb_range`.
#[derive(Debug, Clone)]
struct AgbField {
    field: BumpField,
    raw_min: f64,
    raw_max: f64,
    lo: f64,
    hi: f64,
}

impl AgbField {
    fn new(params: &SceneParams) -> (Self, Vec<f64>) {
        let size = params.size;
        let mut rng = stream(params.seed, 1);
        let n = (size * size).div_ceil(1024) + 4;
        let field = BumpField::random(&mut rng, size, n, (6.0, 20.0));
        let raw = field.render(size, size, 0.0, 0.0, 1.0);
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let [lo, hi] = params.agb_range;
        let f = AgbField {
            field,
            raw_min,
            raw_max,
            lo,
            hi,
        };
        let agb = raw.iter().map(|v| f.scale(*v)).collect();
        (f, agb)
    }

    fn scale(&self, raw: f64) -> f64 {
        if self.hi == self.lo || self.raw_max <= self.raw_min {
            return self.lo;
        }
        let t = (raw - self.raw_min) / (self.raw_max - self.raw_min);
        (self.lo + t * (self.hi - self.lo)).clamp(self.lo, self.hi)
    }

    fn render(&self, rows: usize, cols: usize, row0: f64, col0: f64, step: f64) -> Vec<f64> {
        self.field
            .render(rows, cols, row0, col0, step)
            .into_iter()
            .map(|v| self.scale(v))
            .collect()
    }
}

fn saturating(agb: f64, (base, amp, scale): (f64, f64, f64)) -> f64 {
    base + amp * (1.0 - (-agb / scale).exp())
}

/// Noise-free S2 reflectance of band `b` for a given AGB.
pub fn s2_response(band: usize, agb: f64) -> f64 {
    saturating(agb, S2_RESPONSE[band])
}

/// Noise-free S1 backscatter (dB); `pol` 0 is VV, 1 is VH.
pub fn s1_response(pol: usize, agb: f64) -> f64 {
    saturating(agb, S1_RESPONSE[pol])
}

/// Noise-free GPP for a given AGB at full seasonal amplitude.
pub fn gpp_response(agb: f64) -> f64 {
    GPP_BASE + GPP_PER_AGB * agb
}

fn date(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(SCENE_YEAR, m, d).unwrap()
}

/// Everything a synthetic site provides.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub params: SceneParams,
    pub truth: Raster,
    /// Optical scenes with SCL layers, on the scene grid.
    pub s2: SceneSeries,
    /// Radar scenes on a grid offset by half a pixel.
    pub s1: SceneSeries,
    /// Monthly GPP on a grid with twice the pixel size.
    pub gpp: SceneSeries,
}

/// Cloud cover of one scene: `true` = cloudy, exactly `round(fraction * n)` pixels, plus the
/// normalized cloud intensity used to assign SCL classes.
fn cloud_cover(rng: &mut ChaCha8Rng, size: usize, fraction: f64) -> (Vec<bool>, Vec<f64>) {
    let n = size * size;
    let n_cloudy = (fraction * n as f64).round() as usize;
    if n_cloudy == 0 {
        return (vec![false; n], vec![0.0; n]);
    }
    let blobs = (size * size).div_ceil(256) + 6;
    let s = size as f64;
    let field = BumpField::periodic(rng, size, blobs, ((s / 64.0).max(1.5), (s / 32.0).max(2.0)));
    let mut v = field.render(size, size, 0.0, 0.0, 1.0);
    // Tiny jitter breaks ties so the cloudy count is exact.
    for x in v.iter_mut() {
        *x += rng.gen_range(0.0..1e-9);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut cloudy = vec![false; n];
    let mut intensity = vec![0.0; n];
    for (rank, &i) in order[..n_cloudy].iter().enumerate() {
        cloudy[i] = true;
        intensity[i] = 1.0 - rank as f64 / n_cloudy as f64;
    }
    (cloudy, intensity)
}

/// Builds the full synthetic site.
pub fn generate_scene(params: &SceneParams) -> Result<SynthScene> {
    params.validate()?;
    let size = params.size;
    let n = size * size;
    let grid = params.grid();
    let (field, agb) = AgbField::new(params);
    let truth = Raster::single(grid.clone(), ChannelId::agb(), agb.clone(), vec![true; n])?;

    // Optical series.
    let mut rng = stream(params.seed, 2);
    let s2_noise = normal(params.s2_noise);
    let mut scenes = Vec::new();
    let mut scls = Vec::new();
    for _ in S2_DATES {
        let (cloudy, intensity) = cloud_cover(&mut rng, size, params.cloud_fraction);
        let mut data = vec![0.0; 12 * n];
        let mut scl = vec![0.0; n];
        for i in 0..n {
            scl[i] = if cloudy[i] {
                match intensity[i] {
                    t if t > 2.0 / 3.0 => 9.0,
                    t if t > 1.0 / 3.0 => 8.0,
                    _ => 10.0,
                }
            } else if agb[i] > 30.0 {
                4.0
            } else {
                5.0
            };
        }
        for b in 0..12 {
            for i in 0..n {
                let clean = if cloudy[i] {
                    0.45 + 0.25 * intensity[i]
                } else {
                    s2_response(b, agb[i])
                };
                data[b * n + i] = (clean + s2_noise.sample(&mut rng)).max(0.0);
            }
        }
        scenes.push(Raster::new(grid.clone(), s2_channels(), data, vec![true; n])?);
        scls.push(Raster::single(grid.clone(), ChannelId::scl(), scl, vec![true; n])?);
    }
    let s2 = SceneSeries::new(
        scenes,
        S2_DATES.iter().map(|(m, d)| date(*m, *d)).collect(),
        Some(scls),
    )?;

    // Radar series: pixel centers sit on the scene grid's pixel corners.
    let s1_size = size + 1;
    let s1_grid = Grid {
        origin_x: grid.origin_x - grid.pixel_size_x / 2.0,
        origin_y: grid.origin_y + grid.pixel_size_y / 2.0,
        width: s1_size,
        height: s1_size,
        ..grid.clone()
    };
    let s1_agb = field.render(s1_size, s1_size, -0.5, -0.5, 1.0);
    let mut rng = stream(params.seed, 3);
    let s1_noise = normal(params.s1_noise);
    let mut s1_scenes = Vec::new();
    for _ in S1_DATES {
        let mut data = Vec::with_capacity(2 * s1_agb.len());
        for pol in 0..2 {
            for a in &s1_agb {
                data.push(s1_response(pol, *a) + s1_noise.sample(&mut rng));
            }
        }
        s1_scenes.push(Raster::new(s1_grid.clone(), s1_channels(), data, vec![true; s1_agb.len()])?);
    }
    let s1 = SceneSeries::new(s1_scenes, S1_DATES.iter().map(|(m, d)| date(*m, *d)).collect(), None)?;

    // GPP: 2x coarser pixels, offset by one fine pixel so every fine pixel center is
    // strictly inside the coarse lattice.
    let coarse = size / 2 + 2;
    let gpp_grid = Grid {
        origin_x: grid.origin_x - grid.pixel_size_x,
        origin_y: grid.origin_y + grid.pixel_size_y,
        pixel_size_x: 2.0 * grid.pixel_size_x,
        pixel_size_y: 2.0 * grid.pixel_size_y,
        width: coarse,
        height: coarse,
        ..grid.clone()
    };
    // Coarse pixel (i, j) covers fine pixels 2i-1..=2i; its center is fine coordinate 2i - 0.5.
    let gpp_agb = field.render(coarse, coarse, -0.5, -0.5, 2.0);
    let mut rng = stream(params.seed, 4);
    let gpp_noise = normal(params.gpp_noise);
    let agb_std = {
        let m = agb.iter().sum::<f64>() / n as f64;
        (agb.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n as f64).sqrt()
    };
    let uninformative = normal(GPP_PER_AGB * agb_std);
    let mean_agb = agb.iter().sum::<f64>() / n as f64;
    let mut gpp_scenes = Vec::new();
    for (_, season) in GPP_MONTHS {
        let data = gpp_agb
            .iter()
            .map(|a| {
                let signal = if params.gpp_informative {
                    gpp_response(*a)
                } else {
                    gpp_response(mean_agb) + uninformative.sample(&mut rng)
                };
                season * signal + gpp_noise.sample(&mut rng)
            })
            .collect();
        gpp_scenes.push(Raster::single(gpp_grid.clone(), ChannelId::gpp(), data, vec![true; gpp_agb.len()])?);
    }
    let gpp = SceneSeries::new(
        gpp_scenes,
        GPP_MONTHS.iter().map(|(m, _)| date(*m, 15)).collect(),
        None,
    )?;

    Ok(SynthScene {
        params: params.clone(),
        truth,
        s2,
        s1,
        gpp,
    })
}

/// Footprints along parallel north-south ground tracks.
///
/// Along-track spacing `a` and across-track spacing `s` satisfy `s = 10 a` unless
/// `across_track_spacing` is set; the footprint count matches the expected density.
pub fn sample_footprints(truth: &Raster, params: &SceneParams) -> Result<FootprintSet> {
    params.validate()?;
    if params.footprint_density <= 0.0 {
        return Err(Error::InvalidParameter("footprint_density must be > 0".into()));
    }
    let grid = truth.grid();
    let (w, h) = (grid.width as f64, grid.height as f64);
    let expected = params.footprint_density / 1000.0 * w * h;
    let across = match params.across_track_spacing {
        Some(s) => s,
        None => (10.0 * w * h / expected).sqrt(),
    };
    let n_tracks = ((w / across).round() as usize).max(1);
    let per_track = ((expected / n_tracks as f64).round() as usize).max(1);
    let pitch = w / n_tracks as f64;
    let along = h / per_track as f64;

    let mut rng = stream(params.seed, 5);
    let noise = normal(params.footprint_noise);
    let x_offset = rng.gen_range(0.0..pitch);
    let mut fps = Vec::with_capacity(n_tracks * per_track);
    for k in 0..n_tracks {
        let col = ((x_offset + k as f64 * pitch).floor() as usize).min(grid.width - 1);
        let y_offset = rng.gen_range(0.0..along);
        for j in 0..per_track {
            let row = ((y_offset + j as f64 * along).floor() as usize).min(grid.height - 1);
            // A point strictly inside the cell, away from its edges.
            let fc = col as f64 + rng.gen_range(-0.4..0.4);
            let fr = row as f64 + rng.gen_range(-0.4..0.4);
            let (x, y) = grid.pixel_to_world(fc, fr);
            let i = row * grid.width + col;
            let Some(t) = truth.value(0, i) else { continue };
            let agb = (t + noise.sample(&mut rng)).max(0.0);
            fps.push(Footprint {
                x,
                y,
                agb,
                quality: true,
                source_id: format!("track{k:03}"),
            });
        }
    }
    FootprintSet::new(fps, grid.crs_id.clone())
}

/// Post-fire NIR loss and SWIR gain at the most severely burned pixel.
const BURN_NIR_DROP: f64 = 0.9;
const BURN_SWIR_RISE: f64 = 0.5;

/// Parameters of a synthetic burn: a disk of biomass loss with matching burn signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurnParams {
    /// Disk radius as a fraction of the scene size.
    pub radius_fraction: f64,
    /// Fraction of AGB removed at the disk center; loss tapers to half that at the rim.
    pub severity: f64,
    /// Reflectance noise added to the post-fire bands.
    pub band_noise: f64,
}

impl Default for BurnParams {
    fn default() -> Self {
        BurnParams {
            radius_fraction: 0.25,
            severity: 0.8,
            band_noise: 0.01,
        }
    }
}

/// Pre/post AGB maps, post-fire NIR/SWIR bands and the constructed loss.
#[derive(Debug, Clone)]
pub struct BurnScene {
    pub before: Raster,
    pub after: Raster,
    pub b08_after: Raster,
    pub b12_after: Raster,
    pub b08_before: Raster,
    pub b12_before: Raster,
    /// Total biomass removed, Mg C (sum of losses times cell area).
    pub true_loss: f64,
}

pub fn generate_burn_scene(params: &SceneParams, burn: &BurnParams) -> Result<BurnScene> {
    params.validate()?;
    if !(0.0..=1.0).contains(&burn.severity) || burn.radius_fraction <= 0.0 || burn.band_noise < 0.0 {
        return Err(Error::InvalidParameter(format!("invalid burn parameters {burn:?}")));
    }
    let size = params.size;
    let n = size * size;
    let grid = params.grid();
    let (_, before) = AgbField::new(params);
    let c = (size as f64 - 1.0) / 2.0;
    let radius = burn.radius_fraction * size as f64;
    let mut after = before.clone();
    for i in 0..n {
        let (r, col) = ((i / size) as f64, (i % size) as f64);
        let d = ((r - c).powi(2) + (col - c).powi(2)).sqrt();
        if d <= radius {
            after[i] = before[i] * (1.0 - burn.severity * (1.0 - 0.5 * d / radius));
        }
    }
    let loss: Vec<f64> = before.iter().zip(&after).map(|(b, a)| b - a).collect();
    let true_loss = loss.iter().sum::<f64>() * grid.cell_area_ha();
    // Char signal scales with the biomass actually consumed.
    let max_loss = loss.iter().cloned().fold(0.0, f64::max);
    let burn_level: Vec<f64> = loss.iter().map(|l| if max_loss > 0.0 { l / max_loss } else { 0.0 }).collect();

    let mut rng = stream(params.seed, 6);
    let noise = normal(burn.band_noise);
    let mut band = |agb: &[f64], nir: bool, level: &[f64]| -> Result<Raster> {
        let id = if nir { S2_BANDS[NIR_BAND] } else { "B12" };
        let data = (0..n)
            .map(|i| {
                let v = if nir {
                    s2_response(NIR_BAND, agb[i]) * (1.0 - BURN_NIR_DROP * level[i])
                } else {
                    s2_response(11, agb[i]) + BURN_SWIR_RISE * level[i]
                };
                (v + noise.sample(&mut rng)).max(0.0)
            })
            .collect();
        Raster::single(grid.clone(), ChannelId::s2(id), data, vec![true; n])
    };
    let unburned = vec![0.0; n];
    let b08_before = band(&before, true, &unburned)?;
    let b12_before = band(&before, false, &unburned)?;
    let b08_after = band(&after, true, &burn_level)?;
    let b12_after = band(&after, false, &burn_level)?;
    Ok(BurnScene {
        before: Raster::single(grid.clone(), ChannelId::agb(), before, vec![true; n])?,
        after: Raster::single(grid, ChannelId::agb(), after, vec![true; n])?,
        b08_after,
        b12_after,
        b08_before,
        b12_before,
        true_loss,
    })
}

/// Climate classes used by [`generate_zone_map`]: BWh, BSk, Csb, Cfa, Dfa, Dfb, Cfb, Dfc.
pub const SYNTH_ZONE_CODES: [u8; 8] = [4, 7, 9, 14, 25, 26, 15, 27];

/// Categorical climate-zone raster: a Voronoi partition of the scene with one Köppen code
/// per cell (codes drawn from [`SYNTH_ZONE_CODES`] with decreasing weight). A thin strip
/// along the bottom edge is left unclassified (code 0).
pub fn generate_zone_map(params: &SceneParams) -> Result<Raster> {
    params.validate()?;
    let size = params.size;
    let mut rng = stream(params.seed, 7);
    let n_sites = 16;
    let sites: Vec<(f64, f64, u8)> = (0..n_sites)
        .map(|_| {
            // Weight 1/(k+1) favours the first codes so zone areas differ.
            let weights: Vec<f64> = (0..SYNTH_ZONE_CODES.len()).map(|k| 1.0 / (k as f64 + 1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen_range(0.0..total);
            let mut k = 0;
            while u >= weights[k] && k + 1 < weights.len() {
                u -= weights[k];
                k += 1;
            }
            (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), SYNTH_ZONE_CODES[k])
        })
        .collect();
    let strip = size / 32;
    let data = (0..size * size)
        .map(|i| {
            let (r, c) = ((i / size) as f64, (i % size) as f64);
            if i / size >= size - strip {
                return 0.0;
            }
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - r).powi(2) + (a.1 - c).powi(2);
                    let db = (b.0 - r).powi(2) + (b.1 - c).powi(2);
                    da.total_cmp(&db)
                })
                .expect("sites");
            nearest.2 as f64
        })
        .collect();
    Raster::single(
        params.grid(),
        ChannelId::new(crate::raster::Modality::Zone, "KOPPEN"),
        data,
        vec![true; size * size],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneParams {
        SceneParams {
            size: 64,
            seed,
            ..SceneParams::default()
        }
    }

    #[test]
    fn truth_spans_range() {
        let s = generate_scene(&small(1)).unwrap();
        let d = s.truth.band(0);
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 300.0));
    }

    #[test]
    fn zero_range_is_constant_zero() {
        let p = SceneParams {
            agb_range: [0.0, 0.0],
            ..small(2)
        };
        let s = generate_scene(&p).unwrap();
        assert!(s.truth.band(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_free_channels_are_functions_of_agb() {
        let p = SceneParams {
            s2_noise: 0.0,
            s1_noise: 0.0,
            gpp_noise: 0.0,
            cloud_fraction: 0.0,
            ..small(3)
        };
        let s = generate_scene(&p).unwrap();
        let scene = &s.s2.scenes()[0];
        for i in (0..64 * 64).step_by(97) {
            let a = s.truth.band(0)[i];
            assert_eq!(scene.band(NIR_BAND)[i], s2_response(NIR_BAND, a).max(0.0));
        }
        let again = generate_scene(&p).unwrap();
        assert_eq!(again.s2.scenes(), s.s2.scenes());
        assert_eq!(again.gpp.scenes(), s.gpp.scenes());
    }

    #[test]
    fn exact_cloud_fraction_per_scene() {
        let s = generate_scene(&small(4)).unwrap();
        for scl in s.s2.scl().unwrap() {
            let cloudy = scl.band(0).iter().filter(|v| [8.0, 9.0, 10.0].contains(*v)).count();
            assert_eq!(cloudy, (0.3 * 4096.0f64).round() as usize);
        }
    }

    #[test]
    fn params_validation_lists_all_problems() {
        let p = SceneParams {
            cloud_fraction: 1.5,
            s2_noise: -1.0,
            agb_range: [10.0, 5.0],
            ..SceneParams::default()
        };
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("cloud_fraction") && msg.contains("s2_noise") && msg.contains("agb_range"));
    }

    #[test]
    fn footprints_sit_inside_cells_and_match_truth_without_noise() {
        let p = SceneParams {
            footprint_noise: 0.0,
            ..small(5)
        };
        let s = generate_scene(&p).unwrap();
        let fps = sample_footprints(&s.truth, &p).unwrap();
        assert!(!fps.is_empty());
        for f in &fps.footprints {
            let (r, c) = s.truth.grid().cell_of(f.x, f.y).unwrap();
            assert_eq!(f.agb, s.truth.get(0, r, c));
            let (fc, fr) = s.truth.grid().world_to_pixel(f.x, f.y);
            assert!((fc - c as f64).abs() < 0.45 && (fr - r as f64).abs() < 0.45);
        }
    }

    #[test]
    fn burn_loss_is_positive_and_confined() {
        let b = generate_burn_scene(&small(6), &BurnParams::default()).unwrap();
        assert!(b.true_loss > 0.0);
        let corner = 0;
        assert_eq!(b.before.band(0)[corner], b.after.band(0)[corner]);
    }
}
