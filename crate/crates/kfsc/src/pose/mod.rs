//! Camera pose recovery from fused coordinate maps.
//!
//! The solver chain is: confidence-filter the map into weighted 2D-3D
//! correspondences ([`gather_correspondences`]), robust-fit a pose with
//! random minimal three-point solves ([`ransac_pnp`] over [`p3p_minimal`]),
//! then polish with damped least squares ([`refine_pose`]).
//! [`pose_metrics`] computes the evaluation numbers reported by the
//! pipeline.

mod p3p;
mod ransac;
mod refine;

pub use p3p::p3p_minimal;
pub use ransac::{ransac_pnp, PoseEstimate, RansacConfig};
pub use refine::{jacobian_blocks, refine_pose, residuals};

use std::error::Error;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{project, CameraIntrinsics, Pose, Vec2, Vec3};
use crate::map::CoordStateMap;

#[derive(Debug)]
pub enum PoseError {
    /// Fewer than four usable correspondences survived filtering.
    TooFewCorrespondences { found: usize, needed: usize },
    /// Collinear world points or coincident bearings in a minimal sample.
    DegenerateConfiguration(String),
    /// No model reached the required inlier count.
    NoConsensus { best_inliers: usize, required: usize },
    /// Refinement cost became non-finite.
    Diverged,
    EmptyInput,
    InvalidConfig(String),
}

impl fmt::Display for PoseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoseError::TooFewCorrespondences { found, needed } => {
                write!(f, "only {found} correspondences, need at least {needed}")
            }
            PoseError::DegenerateConfiguration(msg) => {
                write!(f, "degenerate configuration: {msg}")
            }
            PoseError::NoConsensus {
                best_inliers,
                required,
            } => write!(
                f,
                "no consensus: best model has {best_inliers} inliers, {required} required"
            ),
            PoseError::Diverged => write!(f, "refinement diverged to a non-finite cost"),
            PoseError::EmptyInput => write!(f, "empty input"),
            PoseError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl Error for PoseError {}

/// A weighted 2D-3D correspondence: full-resolution pixel, world point,
/// and a confidence weight (inverse variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vec2,
    pub point: Vec3,
    pub weight: f64,
}

/// Reprojection error of one correspondence in pixels; infinite when the
/// point falls behind the camera.
pub(crate) fn reprojection_error_px(
    corr: &Correspondence,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> f64 {
    match project(corr.point, pose, intrinsics) {
        Ok((px, _)) => (px - corr.pixel).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Filters a fused map into pose-solver correspondences.
///
/// Cells whose standard deviation exceeds `lambda_m` are dropped; survivors
/// become correspondences at their full-resolution cell center
/// `((j + 0.5) stride, (i + 0.5) stride)` with weight `1 / variance`.
pub fn gather_correspondences(
    map: &CoordStateMap,
    intrinsics: &CameraIntrinsics,
    lambda_m: f64,
    stride: usize,
) -> Result<Vec<Correspondence>, PoseError> {
    if !(lambda_m.is_finite() && lambda_m > 0.0) {
        return Err(PoseError::InvalidConfig(format!(
            "lambda must be positive, got {lambda_m}"
        )));
    }
    if stride == 0 {
        return Err(PoseError::InvalidConfig("stride must be positive".into()));
    }
    let mut out = Vec::new();
    for (i, j, coord, log_var) in map.iter_valid() {
        let variance = log_var.exp();
        if variance.sqrt() > lambda_m {
            continue;
        }
        let pixel = Vec2::new(
            (j as f64 + 0.5) * stride as f64,
            (i as f64 + 0.5) * stride as f64,
        );
        if !intrinsics.contains(pixel) {
            continue;
        }
        out.push(Correspondence {
            pixel,
            point: coord,
            weight: 1.0 / variance,
        });
    }
    if out.len() < 4 {
        return Err(PoseError::TooFewCorrespondences {
            found: out.len(),
            needed: 4,
        });
    }
    Ok(out)
}

/// Aggregate pose-accuracy numbers over a batch of estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub median_translation_m: f64,
    pub median_rotation_deg: f64,
    /// Fraction of poses within 5 cm translation and 5 degrees rotation.
    pub frac_5cm_5deg: f64,
    /// Per-pose (translation meters, rotation degrees), input order.
    pub per_pose: Vec<(f64, f64)>,
    pub coord_error_mean_m: Option<f64>,
    pub coord_error_std_m: Option<f64>,
}

/// Translation error between camera centers and rotation error between
/// orientations, both in world frame.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let t_err = (estimate.camera_center() - truth.camera_center()).norm();
    let r_err_deg = estimate.rotation_angle_to(truth).to_degrees();
    (t_err, r_err_deg)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Computes median translation/rotation errors and the 5cm-5deg fraction
/// for `(estimate, ground truth)` pose pairs.
pub fn pose_metrics(pairs: &[(Pose, Pose)]) -> Result<MetricsReport, PoseError> {
    if pairs.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let per_pose: Vec<(f64, f64)> = pairs.iter().map(|(e, g)| pose_error(e, g)).collect();
    let mut t: Vec<f64> = per_pose.iter().map(|p| p.0).collect();
    let mut r: Vec<f64> = per_pose.iter().map(|p| p.1).collect();
    t.sort_by(|a, b| a.total_cmp(b));
    r.sort_by(|a, b| a.total_cmp(b));
    let hits = per_pose
        .iter()
        .filter(|(te, re)| *te < 0.05 && *re < 5.0)
        .count();
    Ok(MetricsReport {
        count: pairs.len(),
        median_translation_m: median(&t),
        median_rotation_deg: median(&r),
        frac_5cm_5deg: hits as f64 / pairs.len() as f64,
        per_pose,
        coord_error_mean_m: None,
        coord_error_std_m: None,
    })
}

/// Mean and standard deviation of per-cell coordinate errors over cells
/// valid in both maps of every pair.
pub fn coordinate_error_stats(
    pairs: &[(&CoordStateMap, &CoordStateMap)],
) -> Result<(f64, f64), PoseError> {
    let mut errors = Vec::new();
    for (est, gt) in pairs {
        for (i, j, coord, _) in est.iter_valid() {
            if gt.is_valid(i, j) {
                errors.push((coord - gt.coord(i, j)).norm());
            }
        }
    }
    if errors.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use approx::assert_abs_diff_eq;
    use nalgebra::UnitQuaternion;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 96.0, 72.0, 192, 144).unwrap()
    }

    fn map_with_variances(vars: &[f64]) -> CoordStateMap {
        let side = (vars.len() as f64).sqrt().ceil() as usize;
        let mut m = CoordStateMap::new_invalid(side, side);
        for (k, v) in vars.iter().enumerate() {
            m.set(k / side, k % side, Vec3::new(0.1, 0.2, 2.0), v.ln());
        }
        m
    }

    #[test]
    fn confident_cells_all_pass_the_gate() {
        let m = map_with_variances(&[0.0001; 16]); // sigma 1 cm
        let corrs = gather_correspondences(&m, &intrinsics(), 0.05, 8).unwrap();
        assert_eq!(corrs.len(), 16);
        assert_abs_diff_eq!(corrs[0].weight, 1e4, epsilon = 1e-6);
        // Cell (0, 1) sits at pixel (1.5 * 8, 0.5 * 8).
        assert_abs_diff_eq!(corrs[1].pixel.x, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corrs[1].pixel.y, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn uncertain_maps_yield_too_few_correspondences() {
        let m = map_with_variances(&[0.01; 16]); // sigma 10 cm > 5 cm gate
        let r = gather_correspondences(&m, &intrinsics(), 0.05, 8);
        assert!(matches!(
            r,
            Err(PoseError::TooFewCorrespondences { found: 0, needed: 4 })
        ));
    }

    #[test]
    fn mixed_map_count_matches_a_direct_filter() {
        let vars: Vec<f64> = (0..36)
            .map(|k| if k % 3 == 0 { 0.0001 } else { 0.01 })
            .collect();
        let m = map_with_variances(&vars);
        let expected = vars.iter().filter(|v| v.sqrt() <= 0.05).count();
        let corrs = gather_correspondences(&m, &intrinsics(), 0.05, 8).unwrap();
        assert_eq!(corrs.len(), expected);
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let p = Pose::look_at(
            Vec3::new(0.5, -0.2, -1.0),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(0.0, -1.0, 0.0),
        );
        let (t, r) = pose_error(&p, &p);
        assert_eq!(t, 0.0);
        assert_eq!(r, 0.0);
        let report = pose_metrics(&[(p.clone(), p)]).unwrap();
        assert_eq!(report.frac_5cm_5deg, 1.0);
        assert_eq!(report.median_translation_m, 0.0);
    }

    #[test]
    fn pure_rotation_offset_reports_its_angle() {
        let gt = Pose::identity();
        let axis = Vec3::new(0.0, 1.0, 0.0);
        let q = UnitQuaternion::from_scaled_axis(axis * 10f64.to_radians());
        let est = Pose::new(q * *gt.rotation(), gt.translation());
        let (_, r) = pose_error(&est, &gt);
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn accuracy_fraction_counts_strict_hits() {
        let gt = Pose::identity();
        let near = gt.perturbed(
            Vec3::new(1f64.to_radians(), 0.0, 0.0),
            Vec3::new(0.01, 0.0, 0.0),
        );
        let far_t = gt.perturbed(
            Vec3::new(1f64.to_radians(), 0.0, 0.0),
            Vec3::new(0.10, 0.0, 0.0),
        );
        let far_r = gt.perturbed(
            Vec3::new(10f64.to_radians(), 0.0, 0.0),
            Vec3::new(0.01, 0.0, 0.0),
        );
        let report = pose_metrics(&[
            (near, gt.clone()),
            (far_t, gt.clone()),
            (far_r, gt.clone()),
        ])
        .unwrap();
        assert_abs_diff_eq!(report.frac_5cm_5deg, 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(report.count, 3);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(pose_metrics(&[]), Err(PoseError::EmptyInput)));
        assert!(matches!(
            coordinate_error_stats(&[]),
            Err(PoseError::EmptyInput)
        ));
    }

    #[test]
    fn coordinate_errors_average_over_shared_cells() {
        let mut gt = CoordStateMap::new_invalid(2, 2);
        let mut est = CoordStateMap::new_invalid(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                gt.set(i, j, Vec3::new(0.0, 0.0, 2.0), 0.0);
            }
        }
        est.set(0, 0, Vec3::new(0.1, 0.0, 2.0), 0.0); // error 0.1
        est.set(0, 1, Vec3::new(0.0, 0.3, 2.0), 0.0); // error 0.3
        est.set(1, 0, Vec3::new(0.0, 0.0, 2.0), 0.0); // error 0.0
        let (mean, std) = coordinate_error_stats(&[(&est, &gt)]).unwrap();
        assert_abs_diff_eq!(mean, (0.1 + 0.3) / 3.0, epsilon = 1e-12);
        let expected_var = ((0.1 - mean).powi(2) + (0.3 - mean).powi(2) + mean.powi(2)) / 3.0;
        assert_abs_diff_eq!(std, expected_var.sqrt(), epsilon = 1e-12);
    }
}
