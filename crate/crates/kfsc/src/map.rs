//! Grid containers shared across the pipeline.
//!
//! All grids are row-major with `(row, col)` indexing; row 0 is the top of
//! the image.  Coordinate maps store one 3D scene point, a log-variance and a
//! validity flag per cell.  Invalid cells carry NaN coordinates so accidental
//! use poisons downstream arithmetic instead of silently passing.

use std::error::Error;
use std::fmt;

use crate::geometry::{Vec2, Vec3};

/// Mismatch between two grids that must share a shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeMismatch {
    pub expected: (usize, usize),
    pub got: (usize, usize),
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grid shape {}x{} does not match expected {}x{}",
            self.got.0, self.got.1, self.expected.0, self.expected.1
        )
    }
}

impl Error for ShapeMismatch {}

/// Dense map of per-cell scene coordinates with log-variance uncertainty.
#[derive(Debug, Clone)]
pub struct CoordStateMap {
    height: usize,
    width: usize,
    coords: Vec<Vec3>,
    log_variance: Vec<f64>,
    valid: Vec<bool>,
}

/// Role alias: a coordinate map produced by the measurement system.
pub type MeasurementMap = CoordStateMap;

impl CoordStateMap {
    /// All-invalid map (NaN coordinates, zero log-variance).
    pub fn new_invalid(height: usize, width: usize) -> Self {
        let n = height * width;
        CoordStateMap {
            height,
            width,
            coords: vec![Vec3::new(f64::NAN, f64::NAN, f64::NAN); n],
            log_variance: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        coords: Vec<Vec3>,
        log_variance: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, ShapeMismatch> {
        let n = height * width;
        if coords.len() != n || log_variance.len() != n || valid.len() != n {
            return Err(ShapeMismatch {
                expected: (height, width),
                got: (coords.len(), 1),
            });
        }
        Ok(CoordStateMap {
            height,
            width,
            coords,
            log_variance,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> Vec3 {
        self.coords[self.idx(row, col)]
    }

    #[inline]
    pub fn log_variance(&self, row: usize, col: usize) -> f64 {
        self.log_variance[self.idx(row, col)]
    }

    /// Variance `exp(log_variance)` of the cell.
    #[inline]
    pub fn variance(&self, row: usize, col: usize) -> f64 {
        self.log_variance[self.idx(row, col)].exp()
    }

    /// Standard deviation `exp(log_variance / 2)` of the cell.
    #[inline]
    pub fn stddev(&self, row: usize, col: usize) -> f64 {
        (0.5 * self.log_variance[self.idx(row, col)]).exp()
    }

    pub fn set(&mut self, row: usize, col: usize, coord: Vec3, log_variance: f64) {
        let i = self.idx(row, col);
        self.coords[i] = coord;
        self.log_variance[i] = log_variance;
        self.valid[i] = true;
    }

    pub fn set_invalid(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.coords[i] = Vec3::new(f64::NAN, f64::NAN, f64::NAN);
        self.log_variance[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterates `(row, col, coord, log_variance)` over valid cells.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, Vec3, f64)> + '_ {
        (0..self.height).flat_map(move |i| {
            (0..self.width).filter_map(move |j| {
                let k = i * self.width + j;
                self.valid[k].then(|| (i, j, self.coords[k], self.log_variance[k]))
            })
        })
    }

    pub fn same_shape(&self, other: &CoordStateMap) -> Result<(), ShapeMismatch> {
        if self.shape() != other.shape() {
            return Err(ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn coords_raw(&self) -> &[Vec3] {
        &self.coords
    }

    pub(crate) fn log_variance_raw(&self) -> &[f64] {
        &self.log_variance
    }

    pub(crate) fn valid_raw(&self) -> &[bool] {
        &self.valid
    }
}

/// Cell-wise equality: shapes and validity masks match, and valid cells
/// agree exactly.  Invalid cells compare equal regardless of their NaN
/// payload.
impl PartialEq for CoordStateMap {
    fn eq(&self, other: &Self) -> bool {
        if self.shape() != other.shape() || self.valid != other.valid {
            return false;
        }
        self.valid.iter().enumerate().all(|(k, v)| {
            !*v || (self.coords[k] == other.coords[k]
                && self.log_variance[k] == other.log_variance[k])
        })
    }
}

/// Per-cell 2D displacement field at feature-grid resolution.
///
/// Displacements are expressed in full-resolution pixels; `stride` records
/// how many image pixels one grid cell spans, so consumers can convert
/// between pixel displacements and cell indices.
#[derive(Debug, Clone)]
pub struct FlowField {
    height: usize,
    width: usize,
    stride: f64,
    offsets: Vec<Vec2>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new_invalid(height: usize, width: usize, stride: f64) -> Self {
        let n = height * width;
        FlowField {
            height,
            width,
            stride,
            offsets: vec![Vec2::new(f64::NAN, f64::NAN); n],
            valid: vec![false; n],
        }
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        stride: f64,
        offsets: Vec<Vec2>,
        valid: Vec<bool>,
    ) -> Result<Self, ShapeMismatch> {
        let n = height * width;
        if offsets.len() != n || valid.len() != n {
            return Err(ShapeMismatch {
                expected: (height, width),
                got: (offsets.len(), 1),
            });
        }
        Ok(FlowField {
            height,
            width,
            stride,
            offsets,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    /// Displacement in full-resolution pixels.
    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> Vec2 {
        self.offsets[self.idx(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, offset: Vec2) {
        let i = self.idx(row, col);
        self.offsets[i] = offset;
        self.valid[i] = true;
    }

    pub fn set_invalid(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.offsets[i] = Vec2::new(f64::NAN, f64::NAN);
        self.valid[i] = false;
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_shape(&self, other: &FlowField) -> Result<(), ShapeMismatch> {
        if self.shape() != other.shape() {
            return Err(ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }
}

/// Cell-wise equality mirroring [`CoordStateMap`]'s: invalid cells compare
/// equal regardless of their NaN payload.
impl PartialEq for FlowField {
    fn eq(&self, other: &Self) -> bool {
        if self.shape() != other.shape()
            || self.stride != other.stride
            || self.valid != other.valid
        {
            return false;
        }
        self.valid
            .iter()
            .enumerate()
            .all(|(k, v)| !*v || self.offsets[k] == other.offsets[k])
    }
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ShapeMismatch> {
        if data.len() != height * width {
            return Err(ShapeMismatch {
                expected: (height, width),
                got: (data.len(), 1),
            });
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Clamped lookup: out-of-bounds indices read the nearest border pixel.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Bilinear sample at continuous pixel coordinates `(x, y)` measured at
    /// pixel centers (pixel `(r, c)` has center `(c, r)`), clamped at borders.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let c0 = x0 as isize;
        let r0 = y0 as isize;
        let v00 = self.get_clamped(r0, c0);
        let v01 = self.get_clamped(r0, c0 + 1);
        let v10 = self.get_clamped(r0 + 1, c0);
        let v11 = self.get_clamped(r0 + 1, c0 + 1);
        let top = v00 * (1.0 - fx) + v01 * fx;
        let bottom = v10 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}
