//! Robust pose fitting over random minimal samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pose};
use crate::pose::p3p::p3p_minimal;
use crate::pose::refine::refine_pose;
use crate::pose::{reprojection_error_px, Correspondence, PoseError};
use crate::rng::stream;

/// Knobs for the robust solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold_px: f64,
    /// Early exit once the chance of having seen one all-inlier sample
    /// reaches this probability.
    pub confidence: f64,
    pub min_inliers: usize,
    /// Standard-deviation gate applied when gathering correspondences
    /// (meters); carried here so one config object describes the solver.
    pub lambda_m: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 256,
            inlier_threshold_px: 10.0,
            confidence: 0.999,
            min_inliers: 4,
            lambda_m: 0.05,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        if self.max_iterations == 0 {
            return Err(PoseError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.inlier_threshold_px.is_finite() && self.inlier_threshold_px > 0.0) {
            return Err(PoseError::InvalidConfig(format!(
                "inlier_threshold_px must be positive, got {}",
                self.inlier_threshold_px
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PoseError::InvalidConfig(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.min_inliers < 3 {
            return Err(PoseError::InvalidConfig(
                "min_inliers must be at least 3".into(),
            ));
        }
        if !(self.lambda_m.is_finite() && self.lambda_m > 0.0) {
            return Err(PoseError::InvalidConfig(format!(
                "lambda_m must be positive, got {}",
                self.lambda_m
            )));
        }
        Ok(())
    }
}

/// Robust solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Inlier flags, aligned with the input correspondences.
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
    /// Mean reprojection error over the inliers, pixels.
    pub mean_reproj_err_px: f64,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|m| **m).count()
    }
}

/// Inlier mask, count, and mean inlier error of `pose` under `threshold`.
fn score(
    pose: &Pose,
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    threshold: f64,
) -> (Vec<bool>, usize, f64) {
    let mut mask = vec![false; corrs.len()];
    let mut count = 0;
    let mut err_sum = 0.0;
    for (k, c) in corrs.iter().enumerate() {
        let e = reprojection_error_px(c, pose, intrinsics);
        if e <= threshold {
            mask[k] = true;
            count += 1;
            err_sum += e;
        }
    }
    let mean = if count > 0 {
        err_sum / count as f64
    } else {
        f64::INFINITY
    };
    (mask, count, mean)
}

/// Estimates a pose from weighted 2D-3D correspondences by repeated
/// minimal solves.
///
/// Each iteration draws three distinct correspondences from its own
/// counter-derived random stream (so iterations are order-independent and
/// the result is reproducible for a given `seed`), solves the minimal
/// problem, and keeps the candidate with the most inliers — ties broken by
/// lower mean inlier error, then by earlier iteration.  The loop exits
/// early once enough iterations have run that an all-inlier sample was
/// seen with probability `confidence`.  The winner is polished on its
/// inliers; if polishing loses inliers under the same threshold the
/// unpolished model is kept.
pub fn ransac_pnp(
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    cfg: &RansacConfig,
    seed: u64,
) -> Result<PoseEstimate, PoseError> {
    cfg.validate()?;
    let n = corrs.len();
    if n < 4 {
        return Err(PoseError::TooFewCorrespondences {
            found: n,
            needed: 4,
        });
    }

    struct Best {
        pose: Pose,
        count: usize,
        mean_err: f64,
        iteration: usize,
    }
    let mut best: Option<Best> = None;
    let mut iterations_used = 0;

    for it in 0..cfg.max_iterations {
        iterations_used = it + 1;
        let mut rng = stream(seed, "ransac-iter", it as u64);
        let mut idx = [0usize; 3];
        idx[0] = rng.gen_range(0..n);
        loop {
            idx[1] = rng.gen_range(0..n);
            if idx[1] != idx[0] {
                break;
            }
        }
        loop {
            idx[2] = rng.gen_range(0..n);
            if idx[2] != idx[0] && idx[2] != idx[1] {
                break;
            }
        }
        let sample = [corrs[idx[0]], corrs[idx[1]], corrs[idx[2]]];
        let candidates = match p3p_minimal(&sample, intrinsics) {
            Ok(c) => c,
            Err(PoseError::DegenerateConfiguration(_)) => continue,
            Err(e) => return Err(e),
        };
        for pose in candidates {
            let (_, count, mean_err) = score(&pose, corrs, intrinsics, cfg.inlier_threshold_px);
            let better = match &best {
                None => count > 0,
                Some(b) => count > b.count || (count == b.count && mean_err < b.mean_err),
            };
            if better {
                best = Some(Best {
                    pose,
                    count,
                    mean_err,
                    iteration: it,
                });
            }
        }
        if let Some(b) = &best {
            let w = b.count as f64 / n as f64;
            let p_all_inlier = w * w * w;
            // 1 - (1 - w^3)^k >= confidence
            if p_all_inlier >= 1.0
                || 1.0 - (1.0 - p_all_inlier).powi(iterations_used as i32) >= cfg.confidence
            {
                break;
            }
        }
    }

    let Some(best) = best else {
        return Err(PoseError::NoConsensus {
            best_inliers: 0,
            required: cfg.min_inliers,
        });
    };
    if best.count < cfg.min_inliers {
        return Err(PoseError::NoConsensus {
            best_inliers: best.count,
            required: cfg.min_inliers,
        });
    }
    let _ = best.iteration; // ordering key; earlier iterations win ties by never being replaced

    let (mask, count, mean_err) = score(&best.pose, corrs, intrinsics, cfg.inlier_threshold_px);
    debug_assert_eq!(count, best.count);
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect();

    match refine_pose(&best.pose, &inliers, intrinsics) {
        Ok(refined) => {
            let (r_mask, r_count, r_mean) =
                score(&refined, corrs, intrinsics, cfg.inlier_threshold_px);
            if r_count >= count {
                Ok(PoseEstimate {
                    pose: refined,
                    inlier_mask: r_mask,
                    iterations_used,
                    mean_reproj_err_px: r_mean,
                })
            } else {
                Ok(PoseEstimate {
                    pose: best.pose,
                    inlier_mask: mask,
                    iterations_used,
                    mean_reproj_err_px: mean_err,
                })
            }
        }
        Err(_) => Ok(PoseEstimate {
            pose: best.pose,
            inlier_mask: mask,
            iterations_used,
            mean_reproj_err_px: mean_err,
        }),
    }
}
