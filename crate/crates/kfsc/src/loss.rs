//! Shared Gaussian negative-log-likelihood evaluator.
//!
//! Every probabilistic score in the pipeline — measurement likelihood, prior
//! and posterior — has the same form per pixel with residual `d = m − y`,
//! standard deviation `v = exp(s/2)` and `s` the stored log-variance:
//!
//! ```text
//!     3·ln v + ‖d‖² / (2 v²)
//! ```
//!
//! which is the negative log density of an isotropic 3D Gaussian up to the
//! constant `3/2·ln(2π)`.  The evaluators differ only in which map plays the
//! role of the prediction, so they all delegate here.

use std::error::Error;
use std::fmt;

use crate::geometry::Vec3;
use crate::map::{CoordStateMap, ShapeMismatch};

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    ShapeMismatch(ShapeMismatch),
    /// A pixel counted by the loss produced a NaN or infinite term.
    NonFiniteLoss { row: usize, col: usize },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::ShapeMismatch(s) => write!(f, "{s}"),
            LossError::NonFiniteLoss { row, col } => {
                write!(f, "non-finite loss term at cell ({row}, {col})")
            }
        }
    }
}

impl Error for LossError {}

impl From<ShapeMismatch> for LossError {
    fn from(s: ShapeMismatch) -> Self {
        LossError::ShapeMismatch(s)
    }
}

/// Total loss plus the per-cell terms that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Per-cell loss term; 0 where the cell was not counted.
    pub per_pixel: Vec<f64>,
    /// Cells counted by the sum (valid in both prediction and labels).
    pub counted: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl LossBreakdown {
    pub fn counted_cells(&self) -> usize {
        self.counted.iter().filter(|c| **c).count()
    }
}

/// Gradients of the total loss with respect to the prediction's coordinates
/// and log-variance; zero where the cell was not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub d_coords: Vec<Vec3>,
    pub d_log_variance: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

/// Scalar loss term for one cell.
#[inline]
pub fn cell_nll(residual: Vec3, log_variance: f64) -> f64 {
    // 3·ln v = 3/2·s   and   1/(2v²) = e^(−s)/2.
    1.5 * log_variance + 0.5 * residual.norm_squared() * (-log_variance).exp()
}

/// Sums the per-cell negative log-likelihood of `prediction` against
/// `labels` over cells valid in both maps.
pub fn gaussian_nll(
    prediction: &CoordStateMap,
    labels: &CoordStateMap,
) -> Result<LossBreakdown, LossError> {
    prediction.same_shape(labels)?;
    let (h, w) = prediction.shape();
    let mut per_pixel = vec![0.0; h * w];
    let mut counted = vec![false; h * w];
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !(prediction.is_valid(i, j) && labels.is_valid(i, j)) {
                continue;
            }
            let d = prediction.coord(i, j) - labels.coord(i, j);
            let term = cell_nll(d, prediction.log_variance(i, j));
            if !term.is_finite() {
                return Err(LossError::NonFiniteLoss { row: i, col: j });
            }
            let k = i * w + j;
            per_pixel[k] = term;
            counted[k] = true;
            total += term;
        }
    }
    Ok(LossBreakdown {
        total,
        per_pixel,
        counted,
        height: h,
        width: w,
    })
}

/// Gradients of [`gaussian_nll`] with respect to the prediction's
/// coordinates and log-variance:
///
/// ```text
///     ∂L/∂m = (m − y) / v²           ∂L/∂s = 3/2 − ‖m − y‖² / (2 v²)
/// ```
pub fn gaussian_nll_grad(
    prediction: &CoordStateMap,
    labels: &CoordStateMap,
) -> Result<LossGradients, LossError> {
    prediction.same_shape(labels)?;
    let (h, w) = prediction.shape();
    let mut d_coords = vec![Vec3::zeros(); h * w];
    let mut d_log_variance = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            if !(prediction.is_valid(i, j) && labels.is_valid(i, j)) {
                continue;
            }
            let d = prediction.coord(i, j) - labels.coord(i, j);
            let inv_var = (-prediction.log_variance(i, j)).exp();
            let gc = d * inv_var;
            let gs = 1.5 - 0.5 * d.norm_squared() * inv_var;
            if !(gc.x.is_finite() && gc.y.is_finite() && gc.z.is_finite() && gs.is_finite()) {
                return Err(LossError::NonFiniteLoss { row: i, col: j });
            }
            let k = i * w + j;
            d_coords[k] = gc;
            d_log_variance[k] = gs;
        }
    }
    Ok(LossGradients {
        d_coords,
        d_log_variance,
        height: h,
        width: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_cell(coord: Vec3, log_var: f64) -> CoordStateMap {
        let mut m = CoordStateMap::new_invalid(1, 1);
        m.set(0, 0, coord, log_var);
        m
    }

    #[test]
    fn frozen_scalar_case() {
        // Residual (0.1, 0.2, −0.2), v = 0.5:
        //   3·ln 0.5 + 0.09 / (2·0.25) = −2.0794415417 + 0.18
        // computed independently with scalar arithmetic.
        let pred = one_cell(Vec3::new(0.1, 0.2, -0.2), (0.25f64).ln());
        let gt = one_cell(Vec3::zeros(), 0.0);
        let got = gaussian_nll(&pred, &gt).unwrap();
        assert_abs_diff_eq!(got.total, -1.899_441_541_679_836, epsilon = 1e-9);
        assert_eq!(got.counted_cells(), 1);
    }

    #[test]
    fn loss_is_zero_with_no_overlap() {
        let pred = CoordStateMap::new_invalid(2, 2);
        let gt = one_cell(Vec3::zeros(), 0.0);
        let r = gaussian_nll(&pred, &CoordStateMap::new_invalid(2, 2)).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.counted_cells(), 0);
        assert!(gaussian_nll(&pred, &gt).is_err(), "shape mismatch expected");
    }

    #[test]
    fn gradients_match_central_differences() {
        let pred = one_cell(Vec3::new(0.13, -0.07, 0.21), (0.09f64).ln());
        let gt = one_cell(Vec3::new(0.1, 0.0, 0.2), 0.0);
        let grad = gaussian_nll_grad(&pred, &gt).unwrap();
        let h = 1e-6;

        for axis in 0..3 {
            let mut plus = pred.clone();
            let mut minus = pred.clone();
            let mut cp = pred.coord(0, 0);
            let mut cm = cp;
            cp[axis] += h;
            cm[axis] -= h;
            plus.set(0, 0, cp, pred.log_variance(0, 0));
            minus.set(0, 0, cm, pred.log_variance(0, 0));
            let fd = (gaussian_nll(&plus, &gt).unwrap().total
                - gaussian_nll(&minus, &gt).unwrap().total)
                / (2.0 * h);
            assert_abs_diff_eq!(grad.d_coords[0][axis], fd, epsilon = 1e-6);
        }

        let mut plus = pred.clone();
        let mut minus = pred.clone();
        plus.set(0, 0, pred.coord(0, 0), pred.log_variance(0, 0) + h);
        minus.set(0, 0, pred.coord(0, 0), pred.log_variance(0, 0) - h);
        let fd = (gaussian_nll(&plus, &gt).unwrap().total
            - gaussian_nll(&minus, &gt).unwrap().total)
            / (2.0 * h);
        assert_abs_diff_eq!(grad.d_log_variance[0], fd, epsilon = 1e-6);
    }

    #[test]
    fn loss_minimized_at_variance_equal_third_of_residual_energy() {
        // For fixed residual d, the loss over v² has its minimum at
        // v² = ‖d‖²/3; locate it by golden-section search on s.
        let d = Vec3::new(0.12, -0.05, 0.2);
        let target = d.norm_squared() / 3.0;
        let f = |s: f64| cell_nll(d, s);
        let (mut a, mut b) = (-12.0, 2.0);
        let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
        for _ in 0..200 {
            let x1 = b - phi * (b - a);
            let x2 = a + phi * (b - a);
            if f(x1) < f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let s_min = 0.5 * (a + b);
        assert_abs_diff_eq!(s_min.exp(), target, epsilon = target * 1e-6);
    }

    #[test]
    fn counted_pixel_with_nan_coordinate_errors() {
        let mut pred = one_cell(Vec3::zeros(), 0.0);
        // Force validity on a NaN coordinate through the public setter.
        pred.set(0, 0, Vec3::new(f64::NAN, 0.0, 0.0), 0.0);
        let gt = one_cell(Vec3::zeros(), 0.0);
        assert!(matches!(
            gaussian_nll(&pred, &gt),
            Err(LossError::NonFiniteLoss { row: 0, col: 0 })
        ));
    }

    #[test]
    fn invalid_pixels_do_not_contribute() {
        let mut pred = CoordStateMap::new_invalid(1, 2);
        pred.set(0, 0, Vec3::new(1.0, 0.0, 0.0), 0.0);
        let mut gt = CoordStateMap::new_invalid(1, 2);
        gt.set(0, 0, Vec3::zeros(), 0.0);
        gt.set(0, 1, Vec3::zeros(), 0.0);
        let r = gaussian_nll(&pred, &gt).unwrap();
        assert_eq!(r.counted_cells(), 1);
        assert_abs_diff_eq!(r.total, 0.5, epsilon = 1e-12);
    }
}
