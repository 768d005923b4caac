//! Flow-guided resampling of a coordinate state map.

use crate::geometry::{Vec2, Vec3};
use crate::map::{CoordStateMap, FlowField};
use crate::process::ProcessError;

/// One bilinear tap: integer cell plus its interpolation weight.
struct Tap {
    row: i64,
    col: i64,
    weight: f64,
}

/// The 1, 2, or 4 taps with strictly positive weight for a fractional cell
/// position.  Taps with zero weight are dropped so that a sample landing
/// exactly on a cell (or cell row/column) never depends on neighbors beyond
/// it — in particular samples on the grid border stay usable.
fn bilinear_taps(row: f64, col: f64) -> Vec<Tap> {
    let r0 = row.floor();
    let c0 = col.floor();
    let (tr, tc) = (row - r0, col - c0);
    let mut taps = Vec::with_capacity(4);
    for (dr, wr) in [(0i64, 1.0 - tr), (1i64, tr)] {
        if wr == 0.0 {
            continue;
        }
        for (dc, wc) in [(0i64, 1.0 - tc), (1i64, tc)] {
            if wc == 0.0 {
                continue;
            }
            taps.push(Tap {
                row: r0 as i64 + dr,
                col: c0 as i64 + dc,
                weight: wr * wc,
            });
        }
    }
    taps
}

/// Bilinearly samples a flow field at fractional cell coordinates.
///
/// Returns `None` if any contributing tap is off the grid or invalid.
pub fn sample_flow_bilinear(flow: &FlowField, row: f64, col: f64) -> Option<Vec2> {
    let (h, w) = flow.shape();
    let mut acc = Vec2::new(0.0, 0.0);
    for tap in bilinear_taps(row, col) {
        if tap.row < 0 || tap.col < 0 || tap.row >= h as i64 || tap.col >= w as i64 {
            return None;
        }
        let (r, c) = (tap.row as usize, tap.col as usize);
        if !flow.is_valid(r, c) {
            return None;
        }
        acc += tap.weight * flow.offset(r, c);
    }
    Some(acc)
}

/// Resamples the previous state along the flow into the current frame.
///
/// Cell `(i, j)` of the result is the previous state sampled at
/// `(i, j) - flow / stride`, i.e. where the content now under this cell
/// was one frame ago.  Means and variances are both interpolated
/// bilinearly, variances in variance (not log) space.  A cell becomes
/// invalid when its flow is invalid or any contributing tap is off-grid
/// or invalid.
pub fn warp_state(prev: &CoordStateMap, flow: &FlowField) -> Result<CoordStateMap, ProcessError> {
    let (h, w) = prev.shape();
    if flow.shape() != (h, w) {
        return Err(ProcessError::ShapeMismatch {
            expected: (h, w),
            got: flow.shape(),
        });
    }
    let stride = flow.stride();
    if !(stride.is_finite() && stride > 0.0) {
        return Err(ProcessError::InvalidConfig(format!(
            "flow stride must be positive, got {stride}"
        )));
    }
    let mut out = CoordStateMap::new_invalid(h, w);
    for i in 0..h {
        for j in 0..w {
            if !flow.is_valid(i, j) {
                continue;
            }
            let o = flow.offset(i, j) / stride;
            let (sr, sc) = (i as f64 - o.y, j as f64 - o.x);

            let mut mean = Vec3::zeros();
            let mut var = 0.0;
            let mut ok = true;
            for tap in bilinear_taps(sr, sc) {
                if tap.row < 0 || tap.col < 0 || tap.row >= h as i64 || tap.col >= w as i64 {
                    ok = false;
                    break;
                }
                let (r, c) = (tap.row as usize, tap.col as usize);
                if !prev.is_valid(r, c) {
                    ok = false;
                    break;
                }
                mean += tap.weight * prev.coord(r, c);
                var += tap.weight * prev.variance(r, c);
            }
            if ok {
                out.set(i, j, mean, var.ln());
            }
        }
    }
    Ok(out)
}
