//! Matching cost volumes and soft-argmin flow.

use crate::geometry::Vec2;
use crate::map::FlowField;
use crate::process::features::{l1_distance, FeatureMap};
use crate::process::ProcessError;

/// Per-cell matching costs over a square window of integer cell offsets.
///
/// For a grid cell `p` and offset `o` (in cells, row/col each in
/// `[-r, r]` with `r = (window - 1) / 2`), the stored cost is the L1
/// distance between the current frame's descriptor at `p` and the previous
/// frame's descriptor at `p - o`.  An offset equal to the cell's true
/// frame-to-frame motion therefore has minimal cost.  Entries are masked
/// when either descriptor is undefined or `p - o` falls off the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
    costs: Vec<f64>,
    mask: Vec<bool>,
}

impl CostVolume {
    pub fn from_parts(
        height: usize,
        width: usize,
        window: usize,
        stride: usize,
        costs: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self, ProcessError> {
        if window == 0 || window % 2 == 0 {
            return Err(ProcessError::WindowNotOdd(window));
        }
        let n = height * width * window * window;
        if costs.len() != n || mask.len() != n {
            return Err(ProcessError::ShapeMismatch {
                expected: (n, 1),
                got: (costs.len(), mask.len()),
            });
        }
        Ok(CostVolume {
            height,
            width,
            window,
            stride,
            costs,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Half-width of the offset window in cells.
    pub fn radius(&self) -> i64 {
        (self.window as i64 - 1) / 2
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn entry(&self, row: usize, col: usize, orow: i64, ocol: i64) -> usize {
        let r = self.radius();
        debug_assert!(orow.abs() <= r && ocol.abs() <= r);
        let a = (orow + r) as usize;
        let b = (ocol + r) as usize;
        ((row * self.width + col) * self.window + a) * self.window + b
    }

    /// Cost at cell `(row, col)` for offset `(orow, ocol)` in cells, or
    /// `None` where the entry is masked.
    pub fn cost(&self, row: usize, col: usize, orow: i64, ocol: i64) -> Option<f64> {
        let k = self.entry(row, col, orow, ocol);
        if self.mask[k] {
            Some(self.costs[k])
        } else {
            None
        }
    }
}

/// Matches `curr` against `prev` over a `window x window` cell offset
/// search.
///
/// Both feature maps must share shape and stride, and `window` must be odd.
pub fn build_cost_volume(
    curr: &FeatureMap,
    prev: &FeatureMap,
    window: usize,
) -> Result<CostVolume, ProcessError> {
    if window == 0 || window % 2 == 0 {
        return Err(ProcessError::WindowNotOdd(window));
    }
    if curr.shape() != prev.shape() {
        return Err(ProcessError::ShapeMismatch {
            expected: curr.shape(),
            got: prev.shape(),
        });
    }
    if curr.stride() != prev.stride() {
        return Err(ProcessError::StrideMismatch {
            expected: curr.stride() as f64,
            got: prev.stride() as f64,
        });
    }
    let (h, w) = curr.shape();
    let r = (window as i64 - 1) / 2;
    let n = h * w * window * window;
    let mut costs = vec![0.0; n];
    let mut mask = vec![false; n];

    for i in 0..h {
        for j in 0..w {
            let Some(d_curr) = curr.descriptor(i, j) else {
                continue;
            };
            for orow in -r..=r {
                for ocol in -r..=r {
                    let (pi, pj) = (i as i64 - orow, j as i64 - ocol);
                    if pi < 0 || pj < 0 || pi >= h as i64 || pj >= w as i64 {
                        continue;
                    }
                    let Some(d_prev) = prev.descriptor(pi as usize, pj as usize) else {
                        continue;
                    };
                    let a = (orow + r) as usize;
                    let b = (ocol + r) as usize;
                    let k = ((i * w + j) * window + a) * window + b;
                    costs[k] = l1_distance(d_curr, d_prev);
                    mask[k] = true;
                }
            }
        }
    }

    CostVolume::from_parts(h, w, window, curr.stride(), costs, mask)
}

/// Soft-argmin flow from a cost volume.
///
/// Each cell's flow is the expectation of the offset under a softmax over
/// negated costs at `temperature`, scaled by the stride into
/// full-resolution pixels.  Cells with every offset masked become invalid.
pub fn flow_from_volume(volume: &CostVolume, temperature: f64) -> Result<FlowField, ProcessError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ProcessError::NonPositiveTemperature(temperature));
    }
    let (h, w) = (volume.height(), volume.width());
    let r = volume.radius();
    let mut flow = FlowField::new_invalid(h, w, volume.stride() as f64);

    for i in 0..h {
        for j in 0..w {
            let mut min_cost = f64::INFINITY;
            for orow in -r..=r {
                for ocol in -r..=r {
                    if let Some(c) = volume.cost(i, j, orow, ocol) {
                        min_cost = min_cost.min(c);
                    }
                }
            }
            if !min_cost.is_finite() {
                continue; // every offset masked
            }
            // Shift by the minimum cost before exponentiating so the
            // largest softmax logit is exactly zero.
            let mut weight_sum = 0.0;
            let mut expectation = Vec2::new(0.0, 0.0);
            for orow in -r..=r {
                for ocol in -r..=r {
                    if let Some(c) = volume.cost(i, j, orow, ocol) {
                        let wgt = (-(c - min_cost) / temperature).exp();
                        weight_sum += wgt;
                        expectation += wgt * Vec2::new(ocol as f64, orow as f64);
                    }
                }
            }
            flow.set(i, j, expectation / weight_sum * volume.stride() as f64);
        }
    }
    Ok(flow)
}
