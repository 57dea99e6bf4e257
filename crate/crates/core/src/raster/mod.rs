//! Grid types, tile partitioning, normalization and the on-disk codecs.

mod codec;

pub(crate) use codec::{read_payload, write_payload};
pub use codec::{load_fingerprint, load_mask, load_tile, save_fingerprint, save_mask, save_tile, sidecar_path, Sidecar, DTYPE};

use crate::{Error, Result};

/// Row-major 2-D grid of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Sizing(format!("empty grid {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Sizing(format!(
                "{} values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "empty grid {height}x{width}");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "empty grid {height}x{width}");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the `h x w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Grid> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(Error::Sizing(format!(
                "crop {h}x{w} at ({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + w]);
        }
        Grid::new(h, w, data)
    }

    /// Overwrite the window at `(row, col)` with `patch`.
    pub fn paste(&mut self, patch: &Grid, row: usize, col: usize) -> Result<()> {
        if row + patch.height > self.height || col + patch.width > self.width {
            return Err(Error::Sizing(format!(
                "paste {}x{} at ({row},{col}) outside {}x{}",
                patch.height, patch.width, self.height, self.width
            )));
        }
        for r in 0..patch.height {
            let dst = (row + r) * self.width + col;
            self.data[dst..dst + patch.width].copy_from_slice(patch.row(r));
        }
        Ok(())
    }
}

/// Amplitude tile with product provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pixels: Grid,
    product_id: String,
    provenance: Vec<String>,
}

impl Tile {
    pub fn new(pixels: Grid, product_id: impl Into<String>, provenance: Vec<String>) -> Result<Self> {
        let product_id = product_id.into();
        if product_id.is_empty() {
            return Err(Error::Validation("empty product id".into()));
        }
        if let Some(v) = pixels.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "amplitude {v} in product {product_id} is not finite and non-negative"
            )));
        }
        Ok(Self {
            pixels,
            product_id,
            provenance,
        })
    }

    pub fn pixels(&self) -> &Grid {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn product_id(&self) -> &str {
        &self.product_id
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn into_parts(self) -> (Grid, String, Vec<String>) {
        (self.pixels, self.product_id, self.provenance)
    }

    /// Per-tile min-max normalization to `[0, 1]`.
    pub fn normalize(&self) -> NormalizedTile {
        normalize(&self.pixels).expect("tile pixels are finite")
    }
}

/// Binary tampering mask: 1 marks spliced pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl TamperMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Sizing(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Validation(format!("mask value {b} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty mask {height}x{width}");
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    /// Mask that is 1 exactly on the rectangle `(row, col, h, w)`.
    pub fn rect(height: usize, width: usize, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > height || col + w > width {
            return Err(Error::Sizing(format!(
                "rectangle {h}x{w} at ({row},{col}) outside {height}x{width}"
            )));
        }
        let mut m = Self::zeros(height, width);
        for r in row..row + h {
            m.bits[r * width + col..r * width + col + w].fill(1);
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c] == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.bits[r * self.width + c] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Noise-residual fingerprint, same resolution as its source tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    values: Grid,
    extractor_id: String,
}

impl Fingerprint {
    pub fn new(values: Grid, extractor_id: impl Into<String>) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::Validation("non-finite fingerprint value".into()));
        }
        Ok(Self {
            values,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    /// Zero-mean, unit-variance copy (a constant map becomes all zeros).
    pub fn standardized(&self) -> Fingerprint {
        let n = self.values.len() as f64;
        let mean = self.values.mean();
        let var = self
            .values
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        Fingerprint {
            values: self.values.map(|v| ((v as f64 - mean) * inv) as f32),
            extractor_id: self.extractor_id.clone(),
        }
    }
}

/// Tile mapped affinely to `[0, 1]`, keeping the scale needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTile {
    pixels: Grid,
    scale_min: f32,
    scale_max: f32,
}

impl NormalizedTile {
    /// Wrap an already-normalized grid. Values must lie in `[0, 1]`.
    pub fn new(pixels: Grid, scale_min: f32, scale_max: f32) -> Result<Self> {
        if !(scale_max >= scale_min) || !scale_min.is_finite() || !scale_max.is_finite() {
            return Err(Error::Validation(format!(
                "bad scale ({scale_min}, {scale_max})"
            )));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("normalized value {v} outside [0,1]")));
        }
        Ok(Self {
            pixels,
            scale_min,
            scale_max,
        })
    }

    pub fn pixels(&self) -> &Grid {
        &self.pixels
    }

    pub fn scale(&self) -> (f32, f32) {
        (self.scale_min, self.scale_max)
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    /// Same scale, new pixel content (e.g. after an edit).
    pub fn with_pixels(&self, pixels: Grid) -> Result<Self> {
        Self::new(pixels, self.scale_min, self.scale_max)
    }

    /// Map back to native amplitudes with the stored scale.
    pub fn denormalize(&self) -> Grid {
        let lo = self.scale_min as f64;
        let range = self.scale_max as f64 - lo;
        self.pixels.map(|v| (lo + v as f64 * range) as f32)
    }
}

/// `(x - min) / (max - min)`; a constant grid maps to zeros.
pub fn normalize(grid: &Grid) -> Result<NormalizedTile> {
    if !grid.all_finite() {
        return Err(Error::Validation("non-finite pixel".into()));
    }
    let (lo, hi) = grid.min_max();
    let range = hi as f64 - lo as f64;
    let pixels = if range > 0.0 {
        grid.map(|v| (((v as f64 - lo as f64) / range) as f32).clamp(0.0, 1.0))
    } else {
        Grid::zeros(grid.height(), grid.width())
    };
    Ok(NormalizedTile {
        pixels,
        scale_min: lo,
        scale_max: hi,
    })
}

/// Split a product raster into non-overlapping `side x side` tiles in
/// row-major order. Residual borders are dropped.
pub fn partition_product(raster: &Grid, side: usize, product_id: &str, provenance: &[String]) -> Result<Vec<Tile>> {
    if side == 0 || raster.height() < side || raster.width() < side {
        return Err(Error::Sizing(format!(
            "{}x{} raster cannot hold a {side}x{side} tile",
            raster.height(),
            raster.width()
        )));
    }
    let (rows, cols) = (raster.height() / side, raster.width() / side);
    let mut tiles = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        for tc in 0..cols {
            let pixels = raster.crop(tr * side, tc * side, side, side)?;
            let mut prov = provenance.to_vec();
            prov.push(format!("tile:{side}:{tr}:{tc}"));
            tiles.push(Tile::new(pixels, product_id, prov)?);
        }
    }
    Ok(tiles)
}

/// Number of tiles [`partition_product`] yields, without cutting them.
pub fn tile_count(height: usize, width: usize, side: usize) -> usize {
    if side == 0 {
        return 0;
    }
    (height / side) * (width / side)
}
