//! Random fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use agb_core::compositing::{DateWindow, SceneSeries, CLOUDY_CLASSES};
use agb_core::cube::{Footprint, FootprintSet};
use agb_core::raster::{ChannelId, Grid, Raster};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

pub const CRS: &str = "EPSG:5070";

pub fn grid(w: usize, h: usize) -> Grid {
    Grid::new(0.0, 0.0, 30.0, w, h, CRS).unwrap()
}

/// Raw parts of a random optical series: scenes, dates and SCL layers, in random date order.
pub struct SeriesParts {
    pub scenes: Vec<Raster>,
    pub dates: Vec<NaiveDate>,
    pub scl: Vec<Raster>,
}

impl SeriesParts {
    pub fn series(&self) -> SceneSeries {
        SceneSeries::new(self.scenes.clone(), self.dates.clone(), Some(self.scl.clone())).unwrap()
    }
}

/// Up to 7 scenes of 2 bands on a small grid; values may be invalid and SCL codes are
/// uniform over 0..=11, so roughly half of all observations are cloudy.
pub fn random_series(rng: &mut impl Rng) -> SeriesParts {
    let (w, h) = (rng.gen_range(1..7), rng.gen_range(1..7));
    let g = grid(w, h);
    let len = rng.gen_range(1..=7);
    // Distinct days between May and September, some outside the summer window.
    let mut days: Vec<u32> = (0..150).collect();
    days.shuffle(rng);
    let base = NaiveDate::from_ymd_opt(2021, 5, 1).unwrap();
    let mut parts = SeriesParts {
        scenes: Vec::new(),
        dates: Vec::new(),
        scl: Vec::new(),
    };
    let n = w * h;
    for &d in days.iter().take(len) {
        let valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.9)).collect();
        let data: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        parts.scenes.push(Raster::new(g.clone(), vec![ChannelId::s2("B04"), ChannelId::s2("B08")], data, valid).unwrap());
        let codes: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=11u8) as f64).collect();
        parts.scl.push(Raster::single(g.clone(), ChannelId::scl(), codes, vec![true; n]).unwrap());
        parts.dates.push(base + chrono::Days::new(d as u64));
    }
    parts
}

/// Observations usable at pixel `i`, in date order: (date, values per band).
fn usable_obs(parts: &SeriesParts, i: usize) -> Vec<(NaiveDate, Vec<f64>)> {
    let mut obs: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for t in 0..parts.scenes.len() {
        let s = &parts.scenes[t];
        let code = parts.scl[t].band(0)[i] as u8;
        if s.valid_mask()[i] && parts.scl[t].valid_mask()[i] && !CLOUDY_CLASSES.contains(&code) {
            obs.push((parts.dates[t], (0..s.n_channels()).map(|c| s.band(c)[i]).collect()));
        }
    }
    obs.sort_by_key(|o| o.0);
    obs
}

/// Sort-and-pick median per pixel and band; `None` where nothing is usable.
pub fn median_oracle(parts: &SeriesParts) -> Vec<Option<Vec<f64>>> {
    let n = parts.scenes[0].n_pixels();
    (0..n)
        .map(|i| {
            let obs = usable_obs(parts, i);
            if obs.is_empty() {
                return None;
            }
            let nb = obs[0].1.len();
            Some(
                (0..nb)
                    .map(|b| {
                        let mut v: Vec<f64> = obs.iter().map(|o| o.1[b]).collect();
                        v.sort_by(f64::total_cmp);
                        let k = v.len();
                        if k % 2 == 1 {
                            v[k / 2]
                        } else {
                            (v[k / 2 - 1] + v[k / 2]) / 2.0
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// In-window mean per pixel and band, summed in date order.
pub fn mean_oracle(parts: &SeriesParts, window: DateWindow) -> Vec<Option<Vec<f64>>> {
    let n = parts.scenes[0].n_pixels();
    (0..n)
        .map(|i| {
            let obs: Vec<_> = usable_obs(parts, i).into_iter().filter(|o| window.contains(o.0)).collect();
            if obs.is_empty() {
                return None;
            }
            let nb = obs[0].1.len();
            Some(
                (0..nb)
                    .map(|b| {
                        let mut sum = 0.0;
                        for o in &obs {
                            sum += o.1[b];
                        }
                        sum / obs.len() as f64
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Compares a composite to an oracle; exact equality.
pub fn matches_oracle(r: &Raster, oracle: &[Option<Vec<f64>>]) -> bool {
    oracle.iter().enumerate().all(|(i, o)| match o {
        None => !r.valid_mask()[i],
        Some(v) => r.valid_mask()[i] && v.iter().enumerate().all(|(b, x)| r.band(b)[i] == *x),
    })
}

/// Four-neighbor blend evaluated from map coordinates: the target pixel center is mapped
/// into the source grid, and valid in-range neighbors are weighted and renormalized. Valid
/// when at least half the weight is backed by valid data.
pub fn resample_oracle(src: &Raster, target: &Grid) -> Vec<Option<Vec<f64>>> {
    let sg = src.grid();
    let mut out = Vec::with_capacity(target.len());
    for r in 0..target.height {
        for c in 0..target.width {
            let (x, y) = target.pixel_to_world(c as f64, r as f64);
            let (fc, fr) = sg.world_to_pixel(x, y);
            let (c0, r0) = (fc.floor(), fr.floor());
            let (dx, dy) = (fc - c0, fr - r0);
            let mut wsum = 0.0;
            let mut acc = vec![0.0; src.n_channels()];
            for (ri, wr) in [(r0, 1.0 - dy), (r0 + 1.0, dy)] {
                for (ci, wc) in [(c0, 1.0 - dx), (c0 + 1.0, dx)] {
                    let w = wr * wc;
                    if w == 0.0 || ri < 0.0 || ci < 0.0 || ri >= sg.height as f64 || ci >= sg.width as f64 {
                        continue;
                    }
                    let si = ri as usize * sg.width + ci as usize;
                    if !src.valid_mask()[si] {
                        continue;
                    }
                    wsum += w;
                    for (b, a) in acc.iter_mut().enumerate() {
                        *a += w * src.band(b)[si];
                    }
                }
            }
            out.push((wsum >= 0.5).then(|| acc.iter().map(|a| a / wsum).collect()));
        }
    }
    out
}

/// Random footprints scattered over and around `g`, some flagged low quality.
pub fn random_footprints(rng: &mut impl Rng, g: &Grid, n: usize) -> FootprintSet {
    let (w, h) = (g.width as f64 * g.pixel_size_x, g.height as f64 * g.pixel_size_y);
    let fps = (0..n)
        .map(|k| {
            // A quarter lands exactly on cell edges.
            let (mut u, mut v) = (rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1));
            if rng.gen_bool(0.25) {
                u = (u * g.width as f64).round() / g.width as f64;
                v = (v * g.height as f64).round() / g.height as f64;
            }
            Footprint {
                x: g.origin_x + u * w,
                y: g.origin_y - v * h,
                agb: rng.gen_range(0.0..300.0),
                quality: rng.gen_bool(0.9),
                source_id: format!("fp{k}"),
            }
        })
        .collect();
    FootprintSet::new(fps, g.crs_id.clone()).unwrap()
}

/// Loops footprints × cells with half-open cell bounds; returns per-cell (sum, count) and the
/// number of quality footprints inside no cell.
pub fn match_oracle(fps: &FootprintSet, g: &Grid) -> (Vec<Option<f64>>, usize, usize) {
    let n = g.len();
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); n];
    let (mut outside, mut rejected) = (0, 0);
    for f in &fps.footprints {
        if !f.quality {
            rejected += 1;
            continue;
        }
        let u = (f.x - g.origin_x) / g.pixel_size_x;
        let v = (g.origin_y - f.y) / g.pixel_size_y;
        let mut found = false;
        for r in 0..g.height {
            for c in 0..g.width {
                if c as f64 <= u && u < (c + 1) as f64 && r as f64 <= v && v < (r + 1) as f64 {
                    hits[r * g.width + c].push(f.agb);
                    found = true;
                }
            }
        }
        if !found {
            outside += 1;
        }
    }
    let cells = hits
        .into_iter()
        .map(|h| {
            (!h.is_empty()).then(|| {
                let mut s = 0.0;
                for v in &h {
                    s += v;
                }
                s / h.len() as f64
            })
        })
        .collect();
    (cells, outside, rejected)
}

/// Pairwise disjoint and jointly equal to `universe`.
pub fn is_partition(parts: &[&[usize]], universe: &[usize]) -> bool {
    let mut seen = BTreeSet::new();
    for p in parts {
        for u in *p {
            if !seen.insert(*u) {
                return false;
            }
        }
    }
    seen == universe.iter().copied().collect()
}
