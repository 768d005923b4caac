//! Measurement synthesis and likelihood scoring.
//!
//! The measurement oracle stands in for a per-frame coordinate regressor:
//! it perturbs ground-truth scene coordinates with controllable noise and
//! reports a per-pixel uncertainty.  Inliers receive isotropic Gaussian
//! noise whose scale grows at depth discontinuities; a configurable fraction
//! of pixels become outliers drawn uniformly from a ball.  The reported
//! log-variance always describes the inlier model — outliers are unmodeled
//! errors, which is exactly what the innovation gate must catch — and can be
//! deliberately misreported to emulate a miscalibrated regressor.
//!
//! Every pixel consumes a fixed set of draws from its own counter-derived
//! stream, so two syntheses with the same seed agree bit for bit regardless
//! of evaluation order, and runs differing only in noise scale share the
//! same underlying variates.

use std::error::Error;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::Vec3;
use crate::loss::{gaussian_nll, gaussian_nll_grad, LossBreakdown, LossError, LossGradients};
use crate::map::{CoordStateMap, MeasurementMap};
use crate::rng::stream;

/// Coordinate range within a 3x3 neighborhood that marks a depth
/// discontinuity (meters).
pub const BOUNDARY_RANGE_M: f64 = 0.05;

#[derive(Debug)]
pub enum MeasurementError {
    /// Ground truth has no valid pixels to measure.
    EmptyMap,
    InvalidConfig(String),
    Loss(LossError),
}

impl fmt::Display for MeasurementError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementError::EmptyMap => write!(f, "ground-truth map has no valid pixels"),
            MeasurementError::InvalidConfig(msg) => write!(f, "invalid oracle config: {msg}"),
            MeasurementError::Loss(e) => write!(f, "{e}"),
        }
    }
}

impl Error for MeasurementError {}

impl From<LossError> for MeasurementError {
    fn from(e: LossError) -> Self {
        MeasurementError::Loss(e)
    }
}

/// How the oracle reports its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Reported sigma equals the true inlier sigma.
    Honest,
    /// Reported sigma is `factor` times the true sigma (`factor < 1` is
    /// overconfident).
    Misreported { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementOracleConfig {
    /// Inlier noise standard deviation (meters).
    pub inlier_sigma: f64,
    /// Probability of a pixel being an outlier.
    pub outlier_ratio: f64,
    /// Outliers are uniform in a ball of this radius (meters).
    pub outlier_spread: f64,
    /// Sigma multiplier at depth-discontinuity pixels (>= 1).
    pub boundary_sigma_boost: f64,
    pub reported_sigma_mode: SigmaMode,
}

impl Default for MeasurementOracleConfig {
    fn default() -> Self {
        MeasurementOracleConfig {
            inlier_sigma: 0.02,
            outlier_ratio: 0.02,
            outlier_spread: 0.5,
            boundary_sigma_boost: 2.0,
            reported_sigma_mode: SigmaMode::Honest,
        }
    }
}

impl MeasurementOracleConfig {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !(self.inlier_sigma.is_finite() && self.inlier_sigma > 0.0) {
            return Err(MeasurementError::InvalidConfig(format!(
                "inlier_sigma must be positive, got {}",
                self.inlier_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(MeasurementError::InvalidConfig(format!(
                "outlier_ratio must be in [0, 1], got {}",
                self.outlier_ratio
            )));
        }
        if !(self.outlier_spread.is_finite() && self.outlier_spread >= 0.0) {
            return Err(MeasurementError::InvalidConfig(format!(
                "outlier_spread must be non-negative, got {}",
                self.outlier_spread
            )));
        }
        if !(self.boundary_sigma_boost.is_finite() && self.boundary_sigma_boost >= 1.0) {
            return Err(MeasurementError::InvalidConfig(format!(
                "boundary_sigma_boost must be >= 1, got {}",
                self.boundary_sigma_boost
            )));
        }
        if let SigmaMode::Misreported { factor } = self.reported_sigma_mode {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(MeasurementError::InvalidConfig(format!(
                    "misreport factor must be positive, got {factor}"
                )));
            }
        }
        Ok(())
    }
}

/// Marks cells at abrupt coordinate shifts in the ground-truth map.
///
/// Neighboring cells on one surface differ by the surface's slope times the
/// cell spacing, which at scene depth can easily exceed any fixed range, so
/// raw neighborhood extent cannot separate slope from a true depth step.
/// Instead each cell is compared against the midpoint of every pair of
/// opposite 3x3 neighbors: on a locally planar surface the midpoint predicts
/// the center exactly, while across an object boundary the residual jumps by
/// half the depth step. A cell is flagged when any available opposite pair
/// leaves a residual above `range_m`.
pub fn depth_discontinuity_mask(gt: &CoordStateMap, range_m: f64) -> Vec<bool> {
    let (h, w) = gt.shape();
    let mut mask = vec![false; h * w];
    // Opposite-neighbor directions: vertical, horizontal, both diagonals.
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
    for i in 0..h {
        for j in 0..w {
            if !gt.is_valid(i, j) {
                continue;
            }
            let center = gt.coord(i, j);
            let mut residual: f64 = 0.0;
            for (di, dj) in DIRS {
                let (ai, aj) = (i as i64 - di, j as i64 - dj);
                let (bi, bj) = (i as i64 + di, j as i64 + dj);
                let in_bounds = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64;
                if !in_bounds(ai, aj) || !in_bounds(bi, bj) {
                    continue;
                }
                let (ai, aj, bi, bj) = (ai as usize, aj as usize, bi as usize, bj as usize);
                if !gt.is_valid(ai, aj) || !gt.is_valid(bi, bj) {
                    continue;
                }
                let midpoint = 0.5 * (gt.coord(ai, aj) + gt.coord(bi, bj));
                residual = residual.max((center - midpoint).norm());
            }
            mask[i * w + j] = residual > range_m;
        }
    }
    mask
}

/// Draws a noisy measurement map from ground truth.
///
/// Validity matches the ground truth exactly.  Per valid pixel the stream
/// consumes: one uniform (outlier decision), three standard normals and one
/// uniform (shared by both branches), so parameter changes never shift the
/// draws of other pixels or branches.
pub fn synthesize_measurement(
    gt: &CoordStateMap,
    cfg: &MeasurementOracleConfig,
    seed: u64,
) -> Result<MeasurementMap, MeasurementError> {
    cfg.validate()?;
    if gt.count_valid() == 0 {
        return Err(MeasurementError::EmptyMap);
    }
    let (h, w) = gt.shape();
    let boundary = depth_discontinuity_mask(gt, BOUNDARY_RANGE_M);
    let mut out = CoordStateMap::new_invalid(h, w);
    for i in 0..h {
        for j in 0..w {
            if !gt.is_valid(i, j) {
                continue;
            }
            let k = i * w + j;
            let mut rng = stream(seed, "meas-px", k as u64);
            let outlier_draw: f64 = rng.gen();
            let normals = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let radius_draw: f64 = rng.gen();

            let sigma_true = if boundary[k] {
                cfg.inlier_sigma * cfg.boundary_sigma_boost
            } else {
                cfg.inlier_sigma
            };
            let noise = if outlier_draw < cfg.outlier_ratio {
                // Uniform in a ball: isotropic direction, radius ∝ U^(1/3).
                let norm = normals.norm().max(1e-300);
                normals / norm * (cfg.outlier_spread * radius_draw.cbrt())
            } else {
                normals * sigma_true
            };
            let sigma_reported = match cfg.reported_sigma_mode {
                SigmaMode::Honest => sigma_true,
                SigmaMode::Misreported { factor } => factor * sigma_true,
            };
            out.set(i, j, gt.coord(i, j) + noise, 2.0 * sigma_reported.ln());
        }
    }
    Ok(out)
}

/// Negative log-likelihood of a measurement map against ground truth.
pub fn likelihood_loss(
    measurement: &MeasurementMap,
    gt: &CoordStateMap,
) -> Result<LossBreakdown, LossError> {
    gaussian_nll(measurement, gt)
}

/// Gradients of [`likelihood_loss`] with respect to the measured
/// coordinates and reported log-variance.
pub fn likelihood_loss_grad(
    measurement: &MeasurementMap,
    gt: &CoordStateMap,
) -> Result<LossGradients, LossError> {
    gaussian_nll_grad(measurement, gt)
}
