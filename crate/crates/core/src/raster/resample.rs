use super::{Grid, Raster, NODATA};
use crate::error::{Error, Result};

/// Minimum share of bilinear weight that must fall on valid source pixels.
const MIN_VALID_WEIGHT: f64 = 0.5;

/// Snaps values within 1e-9 of an integer so that aligned grids sample exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resamples `src` onto `target` by blending the four source pixel centers that surround
/// each target pixel center.
///
/// Invalid or out-of-range neighbors are dropped and the remaining weights renormalized;
/// a target pixel stays valid only when at least half of the bilinear weight is backed by
/// valid source pixels. No reprojection is performed, so both grids must share a CRS.
pub fn bilinear_resample(src: &Raster, target: &Grid) -> Result<Raster> {
    let sg = src.grid();
    if sg.crs_id != target.crs_id {
        return Err(Error::CrsMismatch(sg.crs_id.clone(), target.crs_id.clone()));
    }
    if sg.row_axis != target.row_axis {
        return Err(Error::InvalidParameter(
            "source and target grids use different row axes".into(),
        ));
    }
    target.validate()?;
    if src.n_valid() == 0 {
        return Err(Error::EmptySource);
    }

    let (sw, sh) = (sg.width as isize, sg.height as isize);
    let n_src = sg.len();
    let n_out = target.len();
    let n_ch = src.n_channels();
    let src_data = src.data();
    let src_valid = src.valid_mask();

    // Fractional source index of target pixel centers, separable per axis.
    let col_scale = target.pixel_size_x / sg.pixel_size_x;
    let row_scale = target.pixel_size_y / sg.pixel_size_y;
    let col_offset = (target.origin_x - sg.origin_x) / sg.pixel_size_x;
    let row_offset = match target.row_axis {
        super::RowAxis::NorthUp => (sg.origin_y - target.origin_y) / sg.pixel_size_y,
        super::RowAxis::SouthUp => (target.origin_y - sg.origin_y) / sg.pixel_size_y,
    };
    let src_cols: Vec<f64> = (0..target.width)
        .map(|c| snap(col_offset + (c as f64 + 0.5) * col_scale - 0.5))
        .collect();
    let src_rows: Vec<f64> = (0..target.height)
        .map(|r| snap(row_offset + (r as f64 + 0.5) * row_scale - 0.5))
        .collect();

    let mut data = vec![NODATA; n_out * n_ch];
    let mut valid = vec![false; n_out];
    let mut acc = vec![0.0; n_ch];

    for (r, &fr) in src_rows.iter().enumerate() {
        let r0 = fr.floor();
        let dy = fr - r0;
        let r0 = r0 as isize;
        for (c, &fc) in src_cols.iter().enumerate() {
            let c0 = fc.floor();
            let dx = fc - c0;
            let c0 = c0 as isize;
            let taps = [
                (r0, c0, (1.0 - dx) * (1.0 - dy)),
                (r0, c0 + 1, dx * (1.0 - dy)),
                (r0 + 1, c0, (1.0 - dx) * dy),
                (r0 + 1, c0 + 1, dx * dy),
            ];
            let mut wsum = 0.0;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(tr, tc, w) in &taps {
                if w == 0.0 || tr < 0 || tc < 0 || tr >= sh || tc >= sw {
                    continue;
                }
                let si = tr as usize * sg.width + tc as usize;
                if !src_valid[si] {
                    continue;
                }
                wsum += w;
                for (ch, a) in acc.iter_mut().enumerate() {
                    *a += w * src_data[ch * n_src + si];
                }
            }
            if wsum >= MIN_VALID_WEIGHT {
                let o = r * target.width + c;
                valid[o] = true;
                for (ch, a) in acc.iter().enumerate() {
                    data[ch * n_out + o] = a / wsum;
                }
            }
        }
    }
    Raster::new(target.clone(), src.channels().to_vec(), data, valid)
}
