//! Prior assembly: warped state plus motion-dependent process noise.

use serde::{Deserialize, Serialize};

use crate::loss::{gaussian_nll, gaussian_nll_grad, LossBreakdown, LossError, LossGradients};
use crate::map::{CoordStateMap, FlowField};
use crate::process::warp::sample_flow_bilinear;
use crate::process::ProcessError;

/// Process-noise model for the temporal prior.
///
/// The prior variance at a cell is the warped posterior variance plus
/// `base_w2 + flow_gain * |flow|^2`, with `occlusion_penalty` added when
/// the forward flow fails its backward-consistency check (or when the
/// backward flow cannot be sampled at all).  All terms are variances in
/// square meters; flow magnitudes are in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub base_w2: f64,
    pub flow_gain: f64,
    pub occlusion_penalty: f64,
    /// Forward-backward residual above this many pixels marks occlusion.
    pub fb_threshold_px: f64,
}

impl Default for PriorConfig {
    /// The floor covers the dominant transport error: flow is resolved on
    /// the cell grid, so warping is off by up to a fraction of a cell, and a
    /// cell of image motion moves the looked-up coordinate by the local
    /// coordinate gradient — roughly 1–2 cm for a camera a few meters from
    /// the scene. `base_w2 = (1.6 cm)^2` keeps the prior honest about that;
    /// a much smaller floor makes transported cells overconfident and drags
    /// the recovered poses with their accumulated drift.
    fn default() -> Self {
        PriorConfig {
            base_w2: 2.56e-4,
            flow_gain: 1e-6,
            occlusion_penalty: 4e-4,
            fb_threshold_px: 1.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ProcessError> {
        for (name, v) in [
            ("base_w2", self.base_w2),
            ("flow_gain", self.flow_gain),
            ("occlusion_penalty", self.occlusion_penalty),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProcessError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.fb_threshold_px.is_finite() && self.fb_threshold_px > 0.0) {
            return Err(ProcessError::InvalidConfig(format!(
                "fb_threshold_px must be positive, got {}",
                self.fb_threshold_px
            )));
        }
        Ok(())
    }
}

/// Builds the prior for the current frame from the warped previous
/// posterior.
///
/// `forward` is the flow used for warping (previous frame to current).
/// `backward`, when given, is the reverse-direction flow on the previous
/// frame's grid; cells whose forward flow is not confirmed by it receive
/// the occlusion penalty.  Cells invalid in the warped state stay invalid.
pub fn assemble_prior(
    warped: &CoordStateMap,
    forward: &FlowField,
    backward: Option<&FlowField>,
    cfg: &PriorConfig,
) -> Result<CoordStateMap, ProcessError> {
    cfg.validate()?;
    let (h, w) = warped.shape();
    if forward.shape() != (h, w) {
        return Err(ProcessError::ShapeMismatch {
            expected: (h, w),
            got: forward.shape(),
        });
    }
    if let Some(b) = backward {
        if b.shape() != (h, w) {
            return Err(ProcessError::ShapeMismatch {
                expected: (h, w),
                got: b.shape(),
            });
        }
    }
    let stride = forward.stride();
    if !(stride.is_finite() && stride > 0.0) {
        return Err(ProcessError::InvalidConfig(format!(
            "flow stride must be positive, got {stride}"
        )));
    }

    let mut out = CoordStateMap::new_invalid(h, w);
    for i in 0..h {
        for j in 0..w {
            if !warped.is_valid(i, j) || !forward.is_valid(i, j) {
                continue;
            }
            let f = forward.offset(i, j);
            let mut w2 = cfg.base_w2 + cfg.flow_gain * f.norm_squared();
            if let Some(bwd) = backward {
                // The content at this cell sat at p - f one frame ago; the
                // backward flow there should cancel the forward flow.
                let (sr, sc) = (i as f64 - f.y / stride, j as f64 - f.x / stride);
                let occluded = match sample_flow_bilinear(bwd, sr, sc) {
                    Some(b) => (f + b).norm() > cfg.fb_threshold_px,
                    None => true,
                };
                if occluded {
                    w2 += cfg.occlusion_penalty;
                }
            }
            let r2 = warped.variance(i, j) + w2;
            out.set(i, j, warped.coord(i, j), r2.ln());
        }
    }
    Ok(out)
}

/// Negative log-likelihood of the prior against ground truth.
pub fn prior_loss(prior: &CoordStateMap, gt: &CoordStateMap) -> Result<LossBreakdown, LossError> {
    gaussian_nll(prior, gt)
}

/// Gradients of [`prior_loss`] with respect to the prior mean and
/// log-variance.
pub fn prior_loss_grad(
    prior: &CoordStateMap,
    gt: &CoordStateMap,
) -> Result<LossGradients, LossError> {
    gaussian_nll_grad(prior, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec2, Vec3};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform_state(h: usize, w: usize, var: f64) -> CoordStateMap {
        let mut m = CoordStateMap::new_invalid(h, w);
        for i in 0..h {
            for j in 0..w {
                m.set(i, j, Vec3::new(j as f64, i as f64, 2.0), var.ln());
            }
        }
        m
    }

    fn uniform_flow(h: usize, w: usize, dx: f64, dy: f64) -> FlowField {
        let mut f = FlowField::new_invalid(h, w, 8.0);
        for i in 0..h {
            for j in 0..w {
                f.set(i, j, Vec2::new(dx, dy));
            }
        }
        f
    }

    #[test]
    fn variance_follows_the_noise_model_exactly() {
        let warped = uniform_state(4, 4, 0.003);
        let flow = uniform_flow(4, 4, 3.0, -4.0); // |f| = 5 px
        let cfg = PriorConfig {
            base_w2: 1e-5,
            flow_gain: 2e-6,
            occlusion_penalty: 1e-3,
            fb_threshold_px: 1.5,
        };
        let prior = assemble_prior(&warped, &flow, None, &cfg).unwrap();
        let expected = 0.003 + 1e-5 + 2e-6 * 25.0;
        for (i, j, c, s) in prior.iter_valid() {
            assert_abs_diff_eq!(s.exp(), expected, epsilon = 1e-15);
            assert_eq!(c, warped.coord(i, j)); // mean passes through untouched
        }
        assert_eq!(prior.count_valid(), 16);
    }

    #[test]
    fn consistent_backward_flow_avoids_the_penalty() {
        let warped = uniform_state(6, 6, 0.001);
        let fwd = uniform_flow(6, 6, 3.0, 0.0);
        let bwd = uniform_flow(6, 6, -3.0, 0.0);
        let cfg = PriorConfig::default();
        let prior = assemble_prior(&warped, &fwd, Some(&bwd), &cfg).unwrap();
        let expected = 0.001 + cfg.base_w2 + cfg.flow_gain * 9.0;
        // Interior cells sample the backward field in-bounds and cancel.
        assert_abs_diff_eq!(prior.variance(2, 2), expected, epsilon = 1e-15);
        // Cells whose backward sample lands off-grid get the penalty.
        assert_abs_diff_eq!(
            prior.variance(2, 0),
            expected + cfg.occlusion_penalty,
            epsilon = 1e-15
        );
    }

    #[test]
    fn inconsistent_backward_flow_adds_the_penalty() {
        let warped = uniform_state(6, 6, 0.001);
        let fwd = uniform_flow(6, 6, 3.0, 0.0);
        let bwd = uniform_flow(6, 6, 3.0, 0.0); // residual 6 px > 1.5 px
        let cfg = PriorConfig::default();
        let prior = assemble_prior(&warped, &fwd, Some(&bwd), &cfg).unwrap();
        let expected = 0.001 + cfg.base_w2 + cfg.flow_gain * 9.0 + cfg.occlusion_penalty;
        assert_abs_diff_eq!(prior.variance(2, 2), expected, epsilon = 1e-15);
    }

    #[test]
    fn invalid_warped_cells_stay_invalid() {
        let mut warped = uniform_state(4, 4, 0.001);
        warped.set_invalid(1, 2);
        let flow = uniform_flow(4, 4, 0.0, 0.0);
        let prior = assemble_prior(&warped, &flow, None, &PriorConfig::default()).unwrap();
        assert!(!prior.is_valid(1, 2));
        assert_eq!(prior.count_valid(), 15);
    }

    #[test]
    fn bad_config_is_rejected() {
        let warped = uniform_state(2, 2, 0.001);
        let flow = uniform_flow(2, 2, 0.0, 0.0);
        let cfg = PriorConfig {
            base_w2: -1.0,
            ..PriorConfig::default()
        };
        assert!(assemble_prior(&warped, &flow, None, &cfg).is_err());
        let cfg = PriorConfig {
            fb_threshold_px: 0.0,
            ..PriorConfig::default()
        };
        assert!(assemble_prior(&warped, &flow, None, &cfg).is_err());
    }

    proptest! {
        /// The prior can never be more confident than the warped state, and
        /// larger flows never shrink it.
        #[test]
        fn prior_variance_is_monotone(
            var in 1e-6..1e-2f64,
            dx in -20.0..20.0f64,
            dy in -20.0..20.0f64,
            scale in 1.0..3.0f64,
        ) {
            let warped = uniform_state(2, 2, var);
            let cfg = PriorConfig::default();
            let small = assemble_prior(&warped, &uniform_flow(2, 2, dx, dy), None, &cfg).unwrap();
            let large = assemble_prior(
                &warped,
                &uniform_flow(2, 2, dx * scale, dy * scale),
                None,
                &cfg,
            )
            .unwrap();
            prop_assert!(small.variance(0, 0) >= var + cfg.base_w2 - 1e-18);
            prop_assert!(large.variance(0, 0) >= small.variance(0, 0) - 1e-18);
        }
    }
}
