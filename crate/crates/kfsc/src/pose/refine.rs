//! Damped least-squares pose polishing.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Vector2, Vector6};

use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::pose::{Correspondence, PoseError};

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;

/// Weighted reprojection residuals (2 per correspondence) at `pose`.
/// Points behind the camera poison the cost with infinity so trial steps
/// that push points behind the camera are rejected by the line search.
pub fn residuals(
    pose: &Pose,
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    weights: &[f64],
) -> Vec<Vector2<f64>> {
    corrs
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let p_cam = pose.transform(c.point);
            match intrinsics.project_camera(p_cam) {
                Ok((px, _)) => (px - c.pixel) * w.sqrt(),
                Err(_) => Vector2::new(f64::INFINITY, f64::INFINITY),
            }
        })
        .collect()
}

pub(crate) fn cost(residuals: &[Vector2<f64>]) -> f64 {
    residuals.iter().map(|r| r.norm_squared()).sum()
}

/// Full 2x6 Jacobian blocks `[d_residual/d_omega | d_residual/d_delta_t]`
/// for every correspondence, or `None` if any point sits behind the
/// camera.  The pose moves as `R <- exp(omega) R`, `t <- t + delta_t`.
pub fn jacobian_blocks(
    pose: &Pose,
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    weights: &[f64],
) -> Option<Vec<(Matrix2x3<f64>, Matrix2x3<f64>)>> {
    let mut out = Vec::with_capacity(corrs.len());
    for (c, w) in corrs.iter().zip(weights) {
        let rotated = *pose.rotation() * c.point;
        let p_cam = rotated + pose.translation();
        let z = p_cam.z;
        if z <= 1e-9 {
            return None;
        }
        let sw = w.sqrt();
        let proj = Matrix2x3::new(
            intrinsics.fx / z,
            0.0,
            -intrinsics.fx * p_cam.x / (z * z),
            0.0,
            intrinsics.fy / z,
            -intrinsics.fy * p_cam.y / (z * z),
        ) * sw;
        // d(exp(omega) rotated)/d omega at omega = 0 is -[rotated]x.
        let skew = Matrix3::new(
            0.0, -rotated.z, rotated.y, rotated.z, 0.0, -rotated.x, -rotated.y, rotated.x, 0.0,
        );
        out.push((proj * (-skew), proj));
    }
    Some(out)
}

/// Normalizes weights to unit mean so the damping scale is independent of
/// the absolute confidence level; zero or degenerate weights fall back to
/// uniform.
pub(crate) fn normalized_weights(corrs: &[Correspondence]) -> Vec<f64> {
    let sum: f64 = corrs.iter().map(|c| c.weight.max(0.0)).sum();
    if sum <= 0.0 || !sum.is_finite() {
        return vec![1.0; corrs.len()];
    }
    let scale = corrs.len() as f64 / sum;
    corrs.iter().map(|c| c.weight.max(0.0) * scale).collect()
}

/// Minimizes the weighted squared reprojection error over the 6-DoF pose.
///
/// Rotation updates compose a local scaled-axis increment onto the
/// quaternion.  Damping grows on rejected steps and shrinks on accepted
/// ones; iteration stops when the gradient or step drops below tolerance.
/// The returned pose never has higher cost than the input.
pub fn refine_pose(
    initial: &Pose,
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
) -> Result<Pose, PoseError> {
    if corrs.len() < 3 {
        return Err(PoseError::TooFewCorrespondences {
            found: corrs.len(),
            needed: 3,
        });
    }
    let weights = normalized_weights(corrs);
    let mut pose = initial.clone();
    let mut current_cost = cost(&residuals(&pose, corrs, intrinsics, &weights));
    if !current_cost.is_finite() {
        return Err(PoseError::Diverged);
    }

    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let Some(blocks) = jacobian_blocks(&pose, corrs, intrinsics, &weights) else {
            break;
        };
        let res = residuals(&pose, corrs, intrinsics, &weights);

        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for ((jr, jt), r) in blocks.iter().zip(&res) {
            // Assemble J^T J and J^T r from the 2x3 blocks.
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(jr);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(jt);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        if g.amax() < GRADIENT_TOL {
            break;
        }

        let mut stepped = false;
        for _ in 0..16 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vec3::new(step[0], step[1], step[2]);
            let delta_t = Vec3::new(step[3], step[4], step[5]);
            let trial = pose.perturbed(omega, delta_t);
            let trial_cost = cost(&residuals(&trial, corrs, intrinsics, &weights));
            if trial_cost.is_finite() && trial_cost <= current_cost {
                let step_norm = step.norm();
                pose = trial;
                current_cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                if step_norm < STEP_TOL {
                    return Ok(pose);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !stepped {
            break;
        }
    }
    Ok(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 96.0, 72.0, 192, 144).unwrap()
    }

    fn scene_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = stream(seed, "refine-pts", 0);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 1.2 - 0.6,
                    rng.gen::<f64>() * 1.6 + 1.6,
                )
            })
            .collect()
    }

    fn exact_corrs(pose: &Pose, points: &[Vec3]) -> Vec<Correspondence> {
        let k = intrinsics();
        points
            .iter()
            .map(|p| Correspondence {
                pixel: project(*p, pose, &k).unwrap().0,
                point: *p,
                weight: 1.0,
            })
            .collect()
    }

    fn test_pose() -> Pose {
        Pose::look_at(
            Vec3::new(0.2, -0.1, -1.2),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(0.0, -1.0, 0.0),
        )
    }

    #[test]
    fn ground_truth_is_a_stationary_point() {
        let pose = test_pose();
        let corrs = exact_corrs(&pose, &scene_points(40, 1));
        let refined = refine_pose(&pose, &corrs, &intrinsics()).unwrap();
        assert!(refined.rotation_angle_to(&pose) < 1e-10);
        assert!((refined.translation() - pose.translation()).norm() < 1e-10);
    }

    #[test]
    fn recovers_from_a_small_perturbation() {
        let pose = test_pose();
        let corrs = exact_corrs(&pose, &scene_points(40, 2));
        let start = pose.perturbed(
            Vec3::new(1f64.to_radians(), -0.5f64.to_radians(), 0.3f64.to_radians()),
            Vec3::new(0.02, -0.01, 0.015),
        );
        let refined = refine_pose(&start, &corrs, &intrinsics()).unwrap();
        assert!(refined.rotation_angle_to(&pose) < 1e-6);
        assert!((refined.translation() - pose.translation()).norm() < 1e-6);
    }

    #[test]
    fn cost_never_increases() {
        let pose = test_pose();
        let mut corrs = exact_corrs(&pose, &scene_points(60, 3));
        // Perturb pixels so the optimum is nonzero-cost.
        let mut rng = stream(3, "noise", 1);
        for c in corrs.iter_mut() {
            c.pixel.x += rng.gen::<f64>() - 0.5;
            c.pixel.y += rng.gen::<f64>() - 0.5;
        }
        let start = pose.perturbed(
            Vec3::new(0.01, -0.02, 0.005),
            Vec3::new(0.03, 0.01, -0.02),
        );
        let weights = normalized_weights(&corrs);
        let before = cost(&residuals(&start, &corrs, &intrinsics(), &weights));
        let refined = refine_pose(&start, &corrs, &intrinsics()).unwrap();
        let after = cost(&residuals(&refined, &corrs, &intrinsics(), &weights));
        assert!(after <= before, "cost rose from {before} to {after}");
        assert!(after < before * 0.5, "no meaningful progress");
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let k = intrinsics();
        let mut rng = stream(4, "jac", 0);
        let h = 1e-6;
        for _ in 0..100 {
            let pose = Pose::look_at(
                Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() * 0.6 - 0.3,
                    -(rng.gen::<f64>() + 0.5),
                ),
                Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 2.0),
                Vec3::new(0.0, -1.0, 0.0),
            );
            let point = Vec3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 1.2 - 0.6,
                rng.gen::<f64>() * 1.6 + 1.6,
            );
            let Ok((pixel, _)) = project(point, &pose, &k) else {
                continue;
            };
            let corr = Correspondence {
                pixel: pixel + nalgebra::Vector2::new(0.3, -0.2),
                point,
                weight: 0.7 + rng.gen::<f64>(),
            };
            let weights = vec![corr.weight];
            let blocks = jacobian_blocks(&pose, &[corr], &k, &weights).unwrap();
            let (jr, jt) = blocks[0];

            for axis in 0..6 {
                let mut omega = Vec3::zeros();
                let mut delta_t = Vec3::zeros();
                if axis < 3 {
                    omega[axis] = h;
                } else {
                    delta_t[axis - 3] = h;
                }
                let plus = residuals(&pose.perturbed(omega, delta_t), &[corr], &k, &weights)[0];
                let minus =
                    residuals(&pose.perturbed(-omega, -delta_t), &[corr], &k, &weights)[0];
                let fd = (plus - minus) / (2.0 * h);
                let analytic = if axis < 3 {
                    jr.column(axis).into_owned()
                } else {
                    jt.column(axis - 3).into_owned()
                };
                let denom = analytic.norm().max(1.0);
                assert!(
                    (fd - analytic).norm() / denom < 1e-5,
                    "axis {axis}: fd {fd:?} vs analytic {analytic:?}"
                );
            }
        }
    }

    #[test]
    fn weight_scaling_does_not_change_the_optimum() {
        let pose = test_pose();
        let mut corrs = exact_corrs(&pose, &scene_points(30, 5));
        let mut rng = stream(5, "noise", 1);
        for c in corrs.iter_mut() {
            c.pixel.x += 0.4 * (rng.gen::<f64>() - 0.5);
            c.pixel.y += 0.4 * (rng.gen::<f64>() - 0.5);
        }
        let scaled: Vec<Correspondence> = corrs
            .iter()
            .map(|c| Correspondence {
                weight: c.weight * 1000.0,
                ..*c
            })
            .collect();
        let start = pose.perturbed(Vec3::new(0.01, 0.0, -0.01), Vec3::new(0.02, -0.01, 0.0));
        let a = refine_pose(&start, &corrs, &intrinsics()).unwrap();
        let b = refine_pose(&start, &scaled, &intrinsics()).unwrap();
        assert!(a.rotation_angle_to(&b) < 1e-9);
        assert_abs_diff_eq!((a.translation() - b.translation()).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn looking_away_from_the_points_diverges() {
        let pose = test_pose();
        let corrs = exact_corrs(&pose, &scene_points(10, 6));
        // Face the opposite direction: every point lands behind the camera.
        let away = Pose::look_at(
            pose.camera_center(),
            pose.camera_center() + Vec3::new(0.0, 0.0, -10.0),
            Vec3::new(0.0, -1.0, 0.0),
        );
        assert!(matches!(
            refine_pose(&away, &corrs, &intrinsics()),
            Err(PoseError::Diverged)
        ));
    }

    #[test]
    fn too_few_points_error() {
        let pose = test_pose();
        let corrs = exact_corrs(&pose, &scene_points(2, 7));
        assert!(matches!(
            refine_pose(&pose, &corrs, &intrinsics()),
            Err(PoseError::TooFewCorrespondences { .. })
        ));
    }
}
