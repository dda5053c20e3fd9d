use super::Raster;

/// Mirror an index into `0..n` without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// Window origins along one axis of length `len`. The last window always reaches the end.
pub fn tile_origins(len: usize, tile_size: usize, stride: usize) -> Vec<usize> {
    assert!(tile_size >= 1 && stride >= 1, "tile_size and stride must be >= 1");
    let mut out = vec![0];
    let mut o = 0;
    while o + tile_size < len {
        o += stride;
        out.push(o);
    }
    out
}

/// A square window over a raster. Parts outside the raster read reflected pixels.
#[derive(Debug, Clone, Copy)]
pub struct TileView<'a> {
    raster: &'a Raster,
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub padded: bool,
}

impl<'a> TileView<'a> {
    pub fn new(raster: &'a Raster, row: usize, col: usize, size: usize) -> Self {
        let padded = row + size > raster.height() || col + size > raster.width();
        TileView {
            raster,
            row,
            col,
            size,
            padded,
        }
    }

    pub fn raster(&self) -> &'a Raster {
        self.raster
    }

    /// Source pixel index for a tile-local position, after reflection.
    pub fn source_index(&self, r: usize, c: usize) -> usize {
        let sr = reflect_index((self.row + r) as isize, self.raster.height());
        let sc = reflect_index((self.col + c) as isize, self.raster.width());
        sr * self.raster.width() + sc
    }

    /// Whether a tile-local position lies inside the raster (not padding).
    pub fn is_interior(&self, r: usize, c: usize) -> bool {
        self.row + r < self.raster.height() && self.col + c < self.raster.width()
    }

    /// Channel-major `size * size` values; invalid pixels carry the raster sentinel.
    pub fn values(&self) -> Vec<f64> {
        let n = self.raster.n_pixels();
        let data = self.raster.data();
        let mut out = Vec::with_capacity(self.raster.n_channels() * self.size * self.size);
        for ch in 0..self.raster.n_channels() {
            for r in 0..self.size {
                for c in 0..self.size {
                    out.push(data[ch * n + self.source_index(r, c)]);
                }
            }
        }
        out
    }

    /// Validity of each tile pixel (reflected).
    pub fn valid(&self) -> Vec<bool> {
        let valid = self.raster.valid_mask();
        (0..self.size * self.size)
            .map(|k| valid[self.source_index(k / self.size, k % self.size)])
            .collect()
    }
}

/// Covers a raster with square windows of `tile_size` placed every `stride` pixels.
///
/// Windows are ordered row-major by origin. Windows that run past the raster edge are
/// flagged `padded` and read reflected pixels there.
pub fn tile(raster: &Raster, tile_size: usize, stride: usize) -> Vec<TileView<'_>> {
    let rows = tile_origins(raster.height(), tile_size, stride);
    let cols = tile_origins(raster.width(), tile_size, stride);
    rows.iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| TileView::new(raster, r, c, tile_size))
        .collect()
}
