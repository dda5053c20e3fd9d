use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a fractional pixel offset is integral.
const ALIGN_EPS: f64 = 1e-9;

/// Direction of the row axis in map space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowAxis {
    /// Rows advance southwards (y decreases with row); the usual north-up layout.
    NorthUp,
    /// Rows advance northwards.
    SouthUp,
}

/// An affine, axis-aligned pixel grid in a projected CRS.
///
/// `origin_x`/`origin_y` is the outer upper-left corner of pixel (0, 0). Pixel sizes are
/// stored as positive magnitudes; the sign of the y step is carried by [`RowAxis`].
/// Fractional pixel indices refer to pixel centers: (0.0, 0.0) is the center of the
/// upper-left pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub row_axis: RowAxis,
    pub width: usize,
    pub height: usize,
    pub crs_id: String,
}

impl Grid {
    /// North-up grid with square pixels.
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        width: usize,
        height: usize,
        crs_id: impl Into<String>,
    ) -> Result<Self> {
        let grid = Grid {
            origin_x,
            origin_y,
            pixel_size_x: pixel_size,
            pixel_size_y: pixel_size,
            row_axis: RowAxis::NorthUp,
            width,
            height,
            crs_id: crs_id.into(),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = self.pixel_size_x.is_finite()
            && self.pixel_size_y.is_finite()
            && self.pixel_size_x > 0.0
            && self.pixel_size_y > 0.0;
        if !sizes_ok {
            return Err(Error::InvalidParameter(format!(
                "pixel sizes must be positive, got ({}, {})",
                self.pixel_size_x, self.pixel_size_y
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn y_step(&self) -> f64 {
        match self.row_axis {
            RowAxis::NorthUp => -self.pixel_size_y,
            RowAxis::SouthUp => self.pixel_size_y,
        }
    }

    /// Fractional (col, row) of a map coordinate, pixel-center convention.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let col = (x - self.origin_x) / self.pixel_size_x - 0.5;
        let row = (y - self.origin_y) / self.y_step() - 0.5;
        (col, row)
    }

    /// Map coordinate of a fractional (col, row); inverse of [`Grid::world_to_pixel`].
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        let x = self.origin_x + (col + 0.5) * self.pixel_size_x;
        let y = self.origin_y + (row + 0.5) * self.y_step();
        (x, y)
    }

    /// Integer cell containing a map coordinate, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.pixel_size_x).floor();
        let row = ((y - self.origin_y) / self.y_step()).floor();
        let inside = col >= 0.0
            && row >= 0.0
            && col < self.width as f64
            && row < self.height as f64;
        inside.then_some((row as usize, col as usize))
    }

    /// Same CRS, pixel sizes and axis, with origins an integer number of pixels apart.
    pub fn is_aligned_with(&self, other: &Grid) -> bool {
        if self.crs_id != other.crs_id
            || self.row_axis != other.row_axis
            || (self.pixel_size_x - other.pixel_size_x).abs() > ALIGN_EPS * self.pixel_size_x
            || (self.pixel_size_y - other.pixel_size_y).abs() > ALIGN_EPS * self.pixel_size_y
        {
            return false;
        }
        let dx = (other.origin_x - self.origin_x) / self.pixel_size_x;
        let dy = (other.origin_y - self.origin_y) / self.pixel_size_y;
        (dx - dx.round()).abs() < 1e-6 && (dy - dy.round()).abs() < 1e-6
    }

    /// Cell area in hectares.
    pub fn cell_area_ha(&self) -> f64 {
        self.pixel_size_x * self.pixel_size_y / 10_000.0
    }

    /// Errors unless `other` describes exactly the same pixels.
    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.crs_id != other.crs_id {
            return Err(Error::CrsMismatch(self.crs_id.clone(), other.crs_id.clone()));
        }
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{}x{} @ ({}, {}) vs {}x{} @ ({}, {})",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y
            )));
        }
        Ok(())
    }

    /// Sub-grid starting at pixel (row, col) with the given size. The window may extend
    /// past the parent grid.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Grid {
        let (x, y) = self.pixel_to_world(col as f64 - 0.5, row as f64 - 0.5);
        Grid {
            origin_x: x,
            origin_y: y,
            width,
            height,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid10() -> Grid {
        Grid::new(0.0, 0.0, 30.0, 10, 10, "EPSG:5070").unwrap()
    }

    #[test]
    fn upper_left_pixel_center() {
        assert_eq!(grid10().world_to_pixel(15.0, -15.0), (0.0, 0.0));
    }

    #[test]
    fn one_pixel_east() {
        assert_eq!(grid10().world_to_pixel(45.0, -15.0), (1.0, 0.0));
    }

    #[test]
    fn pixel_corner_is_half_offset() {
        assert_eq!(grid10().world_to_pixel(30.0, -30.0), (0.5, 0.5));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0.0, 0.0, 0.0, 10, 10, "x").is_err());
        assert!(Grid::new(0.0, 0.0, 30.0, 0, 10, "x").is_err());
        assert!(Grid::new(0.0, 0.0, -30.0, 1, 1, "x").is_err());
    }

    #[test]
    fn alignment() {
        let g = grid10();
        let mut shifted = g.clone();
        shifted.origin_x += 90.0;
        shifted.origin_y -= 300.0;
        assert!(g.is_aligned_with(&shifted));
        shifted.origin_x += 15.0;
        assert!(!g.is_aligned_with(&shifted));
        let mut other_crs = g.clone();
        other_crs.crs_id = "EPSG:32610".into();
        assert!(!g.is_aligned_with(&other_crs));
    }

    #[test]
    fn south_up_axis() {
        let mut g = grid10();
        g.row_axis = RowAxis::SouthUp;
        assert_eq!(g.world_to_pixel(15.0, 15.0), (0.0, 0.0));
        assert_eq!(g.cell_of(15.0, 45.0), Some((1, 0)));
    }

    #[test]
    fn cell_lookup() {
        let g = grid10();
        assert_eq!(g.cell_of(0.0, 0.0), Some((0, 0)));
        assert_eq!(g.cell_of(299.9, -299.9), Some((9, 9)));
        assert_eq!(g.cell_of(300.0, -15.0), None);
        assert_eq!(g.cell_of(-0.1, -15.0), None);
    }

    #[test]
    fn window_origin() {
        let g = grid10();
        let w = g.window(2, 3, 4, 4);
        assert_eq!((w.origin_x, w.origin_y), (90.0, -60.0));
    }
}
