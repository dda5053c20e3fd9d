//! Cloud-screened median composites and windowed temporal means over scene series.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_raster, Modality, Raster, NODATA};

/// Scene-classification codes treated as unusable: no-data, saturated, cloud shadow,
/// cloud medium/high probability, cirrus, snow.
pub const CLOUDY_CLASSES: [u8; 7] = [0, 1, 3, 8, 9, 10, 11];

/// Highest valid scene-classification code.
pub const MAX_CLASS_CODE: u8 = 11;

/// Co-registered scenes ordered by acquisition date, with optional per-scene SCL layers.
#[derive(Debug, Clone)]
pub struct SceneSeries {
    scenes: Vec<Raster>,
    timestamps: Vec<NaiveDate>,
    scl: Option<Vec<Raster>>,
}

impl SceneSeries {
    /// Validates and sorts by timestamp, so input order never matters.
    pub fn new(scenes: Vec<Raster>, timestamps: Vec<NaiveDate>, scl: Option<Vec<Raster>>) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::EmptySeries);
        }
        if timestamps.len() != scenes.len() {
            return Err(Error::InvalidSeries(format!(
                "{} scenes but {} timestamps",
                scenes.len(),
                timestamps.len()
            )));
        }
        let grid = scenes[0].grid();
        let channels = scenes[0].channels();
        for s in &scenes[1..] {
            s.grid().ensure_same(grid)?;
            if s.channels() != channels {
                return Err(Error::InvalidSeries("scenes carry different channels".into()));
            }
        }
        if let Some(scl) = &scl {
            if scl.len() != scenes.len() {
                return Err(Error::InvalidSeries(format!(
                    "{} scenes but {} SCL layers",
                    scenes.len(),
                    scl.len()
                )));
            }
            for s in scl {
                s.grid().ensure_same(grid)?;
                if s.n_channels() != 1 {
                    return Err(Error::InvalidSeries("SCL layers must have one channel".into()));
                }
            }
        }

        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.sort_by_key(|&i| timestamps[i]);
        if order.windows(2).any(|w| timestamps[w[0]] == timestamps[w[1]]) {
            return Err(Error::InvalidSeries("duplicate acquisition dates".into()));
        }
        let pick = |v: Vec<Raster>| -> Vec<Raster> {
            let mut slots: Vec<Option<Raster>> = v.into_iter().map(Some).collect();
            order.iter().map(|&i| slots[i].take().unwrap()).collect()
        };
        let timestamps = order.iter().map(|&i| timestamps[i]).collect();
        Ok(SceneSeries {
            scenes: pick(scenes),
            timestamps,
            scl: scl.map(pick),
        })
    }

    pub fn scenes(&self) -> &[Raster] {
        &self.scenes
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn scl(&self) -> Option<&[Raster]> {
        self.scl.as_deref()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Per-scene usable-pixel masks: valid, and not cloudy when SCL is present.
    fn usable(&self) -> Result<Vec<Vec<bool>>> {
        let mut out = Vec::with_capacity(self.len());
        for (t, scene) in self.scenes.iter().enumerate() {
            let mut m = scene.valid_mask().to_vec();
            if let Some(scl) = &self.scl {
                for (u, c) in m.iter_mut().zip(cloud_mask(&scl[t])?) {
                    *u &= c;
                }
            }
            out.push(m);
        }
        Ok(out)
    }
}

/// `true` where the SCL class is usable (not in [`CLOUDY_CLASSES`]); invalid SCL pixels
/// are never usable.
pub fn cloud_mask(scl_scene: &Raster) -> Result<Vec<bool>> {
    cloud_mask_with(scl_scene, &CLOUDY_CLASSES)
}

pub fn cloud_mask_with(scl_scene: &Raster, cloudy: &[u8]) -> Result<Vec<bool>> {
    if scl_scene.n_channels() != 1 {
        return Err(Error::InvalidSeries(format!(
            "SCL layer has {} channels, expected 1",
            scl_scene.n_channels()
        )));
    }
    let w = scl_scene.width();
    let band = scl_scene.band(0);
    let mut mask = Vec::with_capacity(band.len());
    for (i, &v) in band.iter().enumerate() {
        if !scl_scene.valid_mask()[i] {
            mask.push(false);
            continue;
        }
        if v.fract() != 0.0 || !(0.0..=MAX_CLASS_CODE as f64).contains(&v) {
            return Err(Error::BadClassCode {
                row: i / w,
                col: i % w,
                value: v,
            });
        }
        mask.push(!cloudy.contains(&(v as u8)));
    }
    Ok(mask)
}

/// Median of a non-empty slice; even counts average the two middle values.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-pixel, per-band median over usable observations. Pixels never usable are invalid.
pub fn median_composite(series: &SceneSeries) -> Result<Raster> {
    let first = series.scenes.first().ok_or(Error::EmptySeries)?;
    if series.scl.is_none() && first.channels().iter().any(|c| c.modality == Modality::S2) {
        return Err(Error::InvalidSeries(
            "optical scenes need SCL layers for cloud screening".into(),
        ));
    }
    let usable = series.usable()?;
    let n = first.n_pixels();
    let nc = first.n_channels();
    let mut data = vec![NODATA; n * nc];
    let mut valid = vec![false; n];
    let mut buf = Vec::with_capacity(series.len());
    for i in 0..n {
        if !usable.iter().any(|u| u[i]) {
            continue;
        }
        valid[i] = true;
        for c in 0..nc {
            buf.clear();
            for (t, scene) in series.scenes.iter().enumerate() {
                if usable[t][i] {
                    buf.push(scene.band(c)[i]);
                }
            }
            data[c * n + i] = median(&mut buf);
        }
    }
    Raster::new(first.grid().clone(), first.channels().to_vec(), data, valid)
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidParameter(format!("window {start}:{end} ends before it starts")));
        }
        Ok(DateWindow { start, end })
    }

    /// June 1 to August 31 of `year`.
    pub fn summer(year: i32) -> Self {
        DateWindow {
            start: NaiveDate::from_ymd_opt(year, 6, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(year, 8, 31).unwrap(),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    /// Summer window of the year of `d`.
    pub fn summer_of(d: NaiveDate) -> Self {
        Self::summer(d.year())
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for DateWindow {
    type Err = Error;

    /// `YYYY-MM-DD:YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("window {s:?} is not START:END in ISO dates"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        DateWindow::new(start, end)
    }
}

/// Per-pixel mean over usable observations acquired inside `window`.
pub fn temporal_mean(series: &SceneSeries, window: DateWindow) -> Result<Raster> {
    let first = series.scenes.first().ok_or(Error::EmptySeries)?;
    let inside: Vec<usize> = (0..series.len())
        .filter(|&t| window.contains(series.timestamps[t]))
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyWindow(window.to_string()));
    }
    let usable = series.usable()?;
    let n = first.n_pixels();
    let nc = first.n_channels();
    let mut data = vec![NODATA; n * nc];
    let mut valid = vec![false; n];
    for i in 0..n {
        let count = inside.iter().filter(|&&t| usable[t][i]).count();
        if count == 0 {
            continue;
        }
        valid[i] = true;
        for c in 0..nc {
            let mut sum = 0.0;
            for &t in &inside {
                if usable[t][i] {
                    sum += series.scenes[t].band(c)[i];
                }
            }
            data[c * n + i] = sum / count as f64;
        }
    }
    Raster::new(first.grid().clone(), first.channels().to_vec(), data, valid)
}

/// One manifest line: scene path, acquisition date, optional SCL path.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub date: NaiveDate,
    pub scl: Option<PathBuf>,
}

/// Reads `path,date[,scl_path]` lines; `#` starts a comment. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::format(
                path,
                format!("line {}: expected path,date[,scl]", lineno + 1),
            ));
        }
        let date = fields[1].parse().map_err(|_| {
            Error::format(path, format!("line {}: bad date {:?}", lineno + 1, fields[1]))
        })?;
        let scl = fields.get(2).filter(|s| !s.is_empty()).map(|s| base.join(s));
        out.push(ManifestEntry {
            path: base.join(fields[0]),
            date,
            scl,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(out)
}

/// Writes a manifest with paths relative to its own directory when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
    };
    let mut text = String::new();
    for e in entries {
        text.push_str(&rel(&e.path));
        text.push(',');
        text.push_str(&e.date.to_string());
        if let Some(s) = &e.scl {
            text.push(',');
            text.push_str(&rel(s));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads every scene (and SCL layer) named by a manifest. Either all or no entries
/// must name an SCL layer.
pub fn load_series(manifest: &Path) -> Result<SceneSeries> {
    let entries = read_manifest(manifest)?;
    let with_scl = entries.iter().filter(|e| e.scl.is_some()).count();
    if with_scl != 0 && with_scl != entries.len() {
        return Err(Error::InvalidSeries(
            "SCL paths must be given for every scene or none".into(),
        ));
    }
    let mut scenes = Vec::with_capacity(entries.len());
    let mut scl = Vec::new();
    for e in &entries {
        scenes.push(read_raster(&e.path)?);
        if let Some(p) = &e.scl {
            scl.push(read_raster(p)?);
        }
    }
    let dates = entries.iter().map(|e| e.date).collect();
    SceneSeries::new(scenes, dates, (with_scl > 0).then_some(scl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{ChannelId, Grid};

    fn grid(w: usize, h: usize) -> Grid {
        Grid::new(0.0, 0.0, 30.0, w, h, "EPSG:5070").unwrap()
    }

    fn scl(codes: &[f64], w: usize) -> Raster {
        let g = grid(w, codes.len() / w);
        Raster::single(g, ChannelId::scl(), codes.to_vec(), vec![true; codes.len()]).unwrap()
    }

    fn scene(values: &[f64], w: usize) -> Raster {
        let g = grid(w, values.len() / w);
        Raster::single(g, ChannelId::s2("B04"), values.to_vec(), vec![true; values.len()]).unwrap()
    }

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, m, d).unwrap()
    }

    #[test]
    fn vegetation_is_clear_and_cloud_is_not() {
        assert!(cloud_mask(&scl(&[4.0; 4], 2)).unwrap().iter().all(|m| *m));
        assert!(cloud_mask(&scl(&[9.0; 4], 2)).unwrap().iter().all(|m| !*m));
    }

    #[test]
    fn mixed_quadrants() {
        let m = cloud_mask(&scl(&[4.0, 3.0, 8.0, 5.0], 2)).unwrap();
        assert_eq!(m, vec![true, false, false, true]);
    }

    #[test]
    fn bad_class_codes() {
        let err = cloud_mask(&scl(&[4.0, 12.0], 2)).unwrap_err();
        assert!(matches!(err, Error::BadClassCode { row: 0, col: 1, .. }));
        assert!(cloud_mask(&scl(&[2.5, 4.0], 2)).is_err());
        assert!(cloud_mask(&scl(&[-1.0, 4.0], 2)).is_err());
    }

    #[test]
    fn invalid_scl_pixel_is_unusable() {
        let g = grid(2, 1);
        let r = Raster::single(g, ChannelId::scl(), vec![4.0, 4.0], vec![true, false]).unwrap();
        assert_eq!(cloud_mask(&r).unwrap(), vec![true, false]);
    }

    #[test]
    fn odd_median() {
        let s = SceneSeries::new(
            vec![scene(&[10.0], 1), scene(&[90.0], 1), scene(&[20.0], 1)],
            vec![day(6, 1), day(6, 2), day(6, 3)],
            Some(vec![scl(&[4.0], 1), scl(&[4.0], 1), scl(&[5.0], 1)]),
        )
        .unwrap();
        assert_eq!(median_composite(&s).unwrap().get(0, 0, 0), 20.0);
    }

    #[test]
    fn single_clear_scene_is_identity() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let s = SceneSeries::new(vec![scene(&v, 2)], vec![day(7, 1)], Some(vec![scl(&[4.0; 4], 2)])).unwrap();
        assert_eq!(median_composite(&s).unwrap(), scene(&v, 2));
    }

    #[test]
    fn all_cloudy_pixel_is_invalid() {
        let s = SceneSeries::new(
            vec![scene(&[1.0, 2.0], 2), scene(&[3.0, 4.0], 2)],
            vec![day(6, 1), day(6, 2)],
            Some(vec![scl(&[9.0, 4.0], 2), scl(&[8.0, 4.0], 2)]),
        )
        .unwrap();
        let c = median_composite(&s).unwrap();
        assert_eq!(c.valid_mask(), &[false, true]);
        assert_eq!(c.get(0, 0, 1), 3.0);
    }

    #[test]
    fn optical_series_requires_scl() {
        let s = SceneSeries::new(vec![scene(&[1.0], 1)], vec![day(6, 1)], None).unwrap();
        assert!(matches!(median_composite(&s), Err(Error::InvalidSeries(_))));
    }

    #[test]
    fn summer_mean_skips_out_of_window() {
        let s = SceneSeries::new(
            vec![scene(&[2.0], 1), scene(&[4.0], 1), scene(&[9.0], 1)],
            vec![day(6, 15), day(8, 31), day(9, 1)],
            None,
        )
        .unwrap();
        assert_eq!(temporal_mean(&s, DateWindow::summer(2021)).unwrap().get(0, 0, 0), 3.0);
    }

    #[test]
    fn empty_window() {
        let s = SceneSeries::new(vec![scene(&[2.0], 1)], vec![day(5, 1)], None).unwrap();
        assert!(matches!(
            temporal_mean(&s, DateWindow::summer(2021)),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn series_validation() {
        assert!(matches!(SceneSeries::new(vec![], vec![], None), Err(Error::EmptySeries)));
        let dup = SceneSeries::new(
            vec![scene(&[1.0], 1), scene(&[2.0], 1)],
            vec![day(6, 1), day(6, 1)],
            None,
        );
        assert!(matches!(dup, Err(Error::InvalidSeries(_))));
        let shuffled = SceneSeries::new(
            vec![scene(&[1.0], 1), scene(&[2.0], 1)],
            vec![day(7, 1), day(6, 1)],
            None,
        )
        .unwrap();
        assert_eq!(shuffled.timestamps(), &[day(6, 1), day(7, 1)]);
        assert_eq!(shuffled.scenes()[0].get(0, 0, 0), 2.0);
    }

    #[test]
    fn window_parsing() {
        let w: DateWindow = "2021-06-01:2021-08-31".parse().unwrap();
        assert_eq!(w, DateWindow::summer(2021));
        assert_eq!(w.to_string(), "2021-06-01:2021-08-31");
        assert!("2021-08-31:2021-06-01".parse::<DateWindow>().is_err());
        assert!("june".parse::<DateWindow>().is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.txt");
        let entries = vec![
            ManifestEntry {
                path: dir.path().join("a.tif"),
                date: day(6, 1),
                scl: Some(dir.path().join("a_scl.tif")),
            },
            ManifestEntry {
                path: dir.path().join("b.tif"),
                date: day(7, 1),
                scl: None,
            },
        ];
        write_manifest(&m, &entries).unwrap();
        assert!(std::fs::read_to_string(&m).unwrap().starts_with("a.tif,2021-06-01,a_scl.tif\n"));
        assert_eq!(read_manifest(&m).unwrap(), entries);
    }
}
