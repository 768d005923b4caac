//! Minimal three-point absolute pose solver.
//!
//! Solves the classical distance equations: with unit bearing vectors
//! `b1, b2, b3` toward three known world points and unknown camera-to-point
//! distances `s1, s2, s3`, the law of cosines links each point pair:
//!
//! ```text
//! s2^2 + s3^2 - 2 s2 s3 cos(a23) = |X2 - X3|^2     (and cyclic)
//! ```
//!
//! Substituting `s2 = u s1`, `s3 = v s1` eliminates `s1`, then `u` is a
//! rational function of `v` and back-substitution leaves a quartic in `v`.
//! The quartic is assembled by explicit polynomial arithmetic and solved
//! through the eigenvalues of its companion matrix, so no closed-form
//! coefficient expansion appears anywhere.  Each real root is polished by
//! Newton steps, the distance triple is tightened by a few Gauss-Newton
//! iterations on the original residuals, and the rigid transform is
//! recovered from the three point pairs.  Candidates that fail to
//! reproject their own inputs to within [`REPROJECTION_TOL_PX`] are
//! discarded.

use nalgebra::{Complex, DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::pose::{reprojection_error_px, Correspondence, PoseError};

/// Candidates must reproject their defining triple at least this well.
pub const REPROJECTION_TOL_PX: f64 = 1e-6;

/// Triangles thinner than this (squared meters) are rejected as collinear.
const MIN_TRIANGLE_AREA_M2: f64 = 1e-8;

/// Dense polynomial, `coeffs[k]` multiplying `v^k`.
#[derive(Debug, Clone)]
struct Poly(Vec<f64>);

impl Poly {
    fn constant(c: f64) -> Poly {
        Poly(vec![c])
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![0.0; n];
        for (k, c) in self.0.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in other.0.iter().enumerate() {
            out[k] += c;
        }
        Poly(out)
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }

    fn eval(&self, v: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }

    fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// Real roots via the companion matrix of the trimmed, monic
    /// polynomial, polished by Newton iterations.
    fn real_roots(&self) -> Vec<f64> {
        let max_mag = self.0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if max_mag == 0.0 {
            return Vec::new();
        }
        let mut coeffs = self.0.clone();
        while coeffs.len() > 1 && coeffs.last().unwrap().abs() <= 1e-12 * max_mag {
            coeffs.pop();
        }
        let d = coeffs.len() - 1;
        if d == 0 {
            return Vec::new();
        }
        let lead = coeffs[d];
        let mut companion = DMatrix::<f64>::zeros(d, d);
        for r in 1..d {
            companion[(r, r - 1)] = 1.0;
        }
        for r in 0..d {
            companion[(r, d - 1)] = -coeffs[r] / lead;
        }
        let eigen: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().cloned().collect();

        let dq = self.derivative();
        let mut roots = Vec::new();
        for e in eigen {
            if e.im.abs() > 1e-6 * (1.0 + e.re.abs()) {
                continue;
            }
            let mut v = e.re;
            for _ in 0..8 {
                let f = self.eval(v);
                let g = dq.eval(v);
                if g.abs() < 1e-300 {
                    break;
                }
                let step = f / g;
                v -= step;
                if step.abs() < 1e-14 * (1.0 + v.abs()) {
                    break;
                }
            }
            if v.is_finite() && !roots.iter().any(|r: &f64| (r - v).abs() < 1e-8 * (1.0 + v.abs()))
            {
                roots.push(v);
            }
        }
        roots
    }
}

/// A few Gauss-Newton iterations on the three distance residuals.
fn refine_distances(
    mut s: Vector3<f64>,
    cos_a: f64,
    cos_b: f64,
    cos_g: f64,
    a2: f64,
    b2: f64,
    c2: f64,
) -> Vector3<f64> {
    let scale = a2.max(b2).max(c2).max(1.0);
    for _ in 0..20 {
        let f = Vector3::new(
            s.y * s.y + s.z * s.z - 2.0 * s.y * s.z * cos_a - a2,
            s.x * s.x + s.z * s.z - 2.0 * s.x * s.z * cos_b - b2,
            s.x * s.x + s.y * s.y - 2.0 * s.x * s.y * cos_g - c2,
        );
        if f.norm() < 1e-13 * scale {
            break;
        }
        let jac = Matrix3::new(
            0.0,
            2.0 * s.y - 2.0 * s.z * cos_a,
            2.0 * s.z - 2.0 * s.y * cos_a,
            2.0 * s.x - 2.0 * s.z * cos_b,
            0.0,
            2.0 * s.z - 2.0 * s.x * cos_b,
            2.0 * s.x - 2.0 * s.y * cos_g,
            2.0 * s.y - 2.0 * s.x * cos_g,
            0.0,
        );
        let Some(step) = jac.lu().solve(&(-f)) else {
            break;
        };
        s += step;
        if step.norm() < 1e-15 * (1.0 + s.norm()) {
            break;
        }
    }
    s
}

/// Rigid transform mapping three world points onto three camera-frame
/// points via matched orthonormal triads.
fn rigid_from_three(world: &[Vec3; 3], cam: &[Vec3; 3]) -> Option<Pose> {
    let triad = |p: &[Vec3; 3]| -> Option<Matrix3<f64>> {
        let u = p[1] - p[0];
        let v = p[2] - p[0];
        let n = u.cross(&v);
        if u.norm() < 1e-12 || n.norm() < 1e-12 {
            return None;
        }
        let e1 = u.normalize();
        let e3 = n.normalize();
        let e2 = e3.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, e3]))
    };
    let mw = triad(world)?;
    let mc = triad(cam)?;
    let r = mc * mw.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cam[0] - rotation * world[0];
    Some(Pose::new(rotation, t))
}

/// Solves the three-point absolute pose problem.
///
/// Returns every real solution (up to four) whose reprojection of the
/// three inputs is within [`REPROJECTION_TOL_PX`].  Fails on collinear
/// world points or (near-)coincident bearing directions.
pub fn p3p_minimal(
    corrs: &[Correspondence; 3],
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<Pose>, PoseError> {
    let x1 = corrs[0].point;
    let x2 = corrs[1].point;
    let x3 = corrs[2].point;
    let area2 = (x2 - x1).cross(&(x3 - x1)).norm();
    if 0.5 * area2 < MIN_TRIANGLE_AREA_M2 {
        return Err(PoseError::DegenerateConfiguration(format!(
            "world triangle area {:.3e} m^2 below minimum",
            0.5 * area2
        )));
    }
    let bearings: Vec<Vec3> = corrs
        .iter()
        .map(|c| intrinsics.ray_direction(c.pixel).normalize())
        .collect();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if bearings[i].dot(&bearings[j]) > 1.0 - 1e-12 {
            return Err(PoseError::DegenerateConfiguration(
                "coincident bearing directions".to_string(),
            ));
        }
    }

    let a2 = (x2 - x3).norm_squared();
    let b2 = (x1 - x3).norm_squared();
    let c2 = (x1 - x2).norm_squared();
    let cos_a = bearings[1].dot(&bearings[2]);
    let cos_b = bearings[0].dot(&bearings[2]);
    let cos_g = bearings[0].dot(&bearings[1]);

    // Q(v) = 1 + v^2 - 2 v cos_b, so s1 = sqrt(b2 / Q(v)).
    let q = Poly(vec![1.0, -2.0 * cos_b, 1.0]);
    // Eliminating s1 and u^2 leaves u = N(v) / D(v):
    let n = Poly(vec![1.0, 0.0, -1.0]).add(&q.scale((a2 - c2) / b2));
    let d = Poly(vec![2.0 * cos_g, -2.0 * cos_a]);
    // Back-substituted constraint: N^2 - 2 cos_g N D + D^2 (1 - (c2/b2) Q).
    let quartic = n.mul(&n).add(&n.mul(&d).scale(-2.0 * cos_g)).add(
        &d.mul(&d)
            .mul(&Poly::constant(1.0).add(&q.scale(-c2 / b2))),
    );

    let mut candidates = Vec::new();
    for v in quartic.real_roots() {
        if !(v.is_finite() && v > 0.0) {
            continue;
        }
        let qv = q.eval(v);
        if qv <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let dv = d.eval(v);
        // u from the rational substitution, or from the remaining
        // quadratic when its denominator vanishes at this root.
        let us: Vec<f64> = if dv.abs() > 1e-9 {
            vec![n.eval(v) / dv]
        } else {
            let disc = cos_g * cos_g - (1.0 - (c2 / b2) * qv);
            if disc < 0.0 {
                continue;
            }
            vec![cos_g + disc.sqrt(), cos_g - disc.sqrt()]
        };
        for u in us {
            let s = refine_distances(
                Vector3::new(s1, u * s1, v * s1),
                cos_a,
                cos_b,
                cos_g,
                a2,
                b2,
                c2,
            );
            if !(s.x > 0.0 && s.y > 0.0 && s.z > 0.0) || !s.iter().all(|d| d.is_finite()) {
                continue;
            }
            let cam = [s.x * bearings[0], s.y * bearings[1], s.z * bearings[2]];
            let Some(pose) = rigid_from_three(&[x1, x2, x3], &cam) else {
                continue;
            };
            let max_err = corrs
                .iter()
                .map(|c| reprojection_error_px(c, &pose, intrinsics))
                .fold(0.0f64, f64::max);
            if max_err <= REPROJECTION_TOL_PX {
                candidates.push(pose);
            }
        }
    }
    Ok(candidates)
}
