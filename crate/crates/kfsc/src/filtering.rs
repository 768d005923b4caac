//! Per-pixel recursive fusion of the temporal prior with the current
//! measurement, innovation-consistency gating, and the pooled baselines
//! used for comparison.
//!
//! Fusion treats each pixel as an independent 3-component state with
//! isotropic prior variance `r^2` and measurement variance `v^2`:
//!
//! - innovation `e = z - m_prior`, gain `k = r^2 / (v^2 + r^2)`,
//! - fused mean `m_prior + k e`, fused variance `r^2 (1 - k)`.
//!
//! The normalized innovation squared `|e|^2 / (v^2 + r^2)` follows a
//! chi-square distribution with three degrees of freedom when both inputs
//! are consistent; pixels exceeding the `1 - alpha` quantile are treated as
//! temporal outliers — the prior is discarded as if infinitely uncertain
//! and the posterior falls back to the measurement alone.

use std::error::Error;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::loss::{gaussian_nll, gaussian_nll_grad, LossBreakdown, LossError, LossGradients};
use crate::map::{CoordStateMap, MeasurementMap, ShapeMismatch};
pub use crate::stats::chi2_quantile;
use crate::stats::StatsError;

#[derive(Debug)]
pub enum FilterError {
    Shape(ShapeMismatch),
    /// Gate significance level must lie strictly inside (0, 1).
    BadAlpha(f64),
    BadTemperature(f64),
    NonFinite(String),
    NoNeighbors,
    Stats(StatsError),
    Loss(LossError),
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::Shape(e) => write!(f, "{e}"),
            FilterError::BadAlpha(a) => write!(f, "significance level must be in (0, 1), got {a}"),
            FilterError::BadTemperature(t) => {
                write!(f, "similarity temperature must be positive, got {t}")
            }
            FilterError::NonFinite(what) => write!(f, "non-finite value in {what}"),
            FilterError::NoNeighbors => write!(f, "baseline fusion needs at least one neighbor"),
            FilterError::Stats(e) => write!(f, "{e}"),
            FilterError::Loss(e) => write!(f, "{e}"),
        }
    }
}

impl Error for FilterError {}

impl From<ShapeMismatch> for FilterError {
    fn from(e: ShapeMismatch) -> Self {
        FilterError::Shape(e)
    }
}

impl From<StatsError> for FilterError {
    fn from(e: StatsError) -> Self {
        FilterError::Stats(e)
    }
}

impl From<LossError> for FilterError {
    fn from(e: LossError) -> Self {
        FilterError::Loss(e)
    }
}

/// Per-pixel record of what the fusion step did.
///
/// `innovation`, `kalman_gain` and `nis` are populated only where both the
/// prior and the measurement were valid (`evaluated`); elsewhere they hold
/// NaN.  `nis_rejected` marks evaluated pixels whose posterior fell back to
/// the measurement.
#[derive(Debug, Clone)]
pub struct FusionDiagnostics {
    height: usize,
    width: usize,
    innovation: Vec<Vec3>,
    kalman_gain: Vec<f64>,
    nis: Vec<f64>,
    nis_rejected: Vec<bool>,
    evaluated: Vec<bool>,
}

impl FusionDiagnostics {
    fn new_empty(height: usize, width: usize) -> Self {
        let n = height * width;
        FusionDiagnostics {
            height,
            width,
            innovation: vec![Vec3::new(f64::NAN, f64::NAN, f64::NAN); n],
            kalman_gain: vec![f64::NAN; n],
            nis: vec![f64::NAN; n],
            nis_rejected: vec![false; n],
            evaluated: vec![false; n],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    /// Whether both inputs were valid at this pixel.
    pub fn is_evaluated(&self, row: usize, col: usize) -> bool {
        self.evaluated[self.idx(row, col)]
    }

    pub fn innovation(&self, row: usize, col: usize) -> Option<Vec3> {
        let k = self.idx(row, col);
        self.evaluated[k].then(|| self.innovation[k])
    }

    pub fn kalman_gain(&self, row: usize, col: usize) -> Option<f64> {
        let k = self.idx(row, col);
        self.evaluated[k].then(|| self.kalman_gain[k])
    }

    pub fn nis(&self, row: usize, col: usize) -> Option<f64> {
        let k = self.idx(row, col);
        self.evaluated[k].then(|| self.nis[k])
    }

    pub fn is_rejected(&self, row: usize, col: usize) -> bool {
        self.nis_rejected[self.idx(row, col)]
    }

    pub fn evaluated_count(&self) -> usize {
        self.evaluated.iter().filter(|e| **e).count()
    }

    pub fn rejected_count(&self) -> usize {
        self.nis_rejected.iter().filter(|r| **r).count()
    }

    /// Fraction of evaluated pixels that were rejected (0 if none were
    /// evaluated).
    pub fn rejection_rate(&self) -> f64 {
        let n = self.evaluated_count();
        if n == 0 {
            0.0
        } else {
            self.rejected_count() as f64 / n as f64
        }
    }
}

fn fuse_with_gate(
    prior: &CoordStateMap,
    meas: &MeasurementMap,
    gate: Option<f64>,
) -> Result<(CoordStateMap, FusionDiagnostics), FilterError> {
    prior.same_shape(meas)?;
    let (h, w) = prior.shape();
    let mut post = CoordStateMap::new_invalid(h, w);
    let mut diag = FusionDiagnostics::new_empty(h, w);

    for i in 0..h {
        for j in 0..w {
            match (prior.is_valid(i, j), meas.is_valid(i, j)) {
                (true, true) => {
                    let r2 = prior.variance(i, j);
                    let v2 = meas.variance(i, j);
                    let e = meas.coord(i, j) - prior.coord(i, j);
                    let s = v2 + r2;
                    let k = r2 / s;
                    let nis = e.norm_squared() / s;

                    let di = diag.idx(i, j);
                    diag.evaluated[di] = true;
                    diag.innovation[di] = e;
                    diag.kalman_gain[di] = k;
                    diag.nis[di] = nis;

                    if gate.is_some_and(|t| nis > t) {
                        diag.nis_rejected[di] = true;
                        post.set(i, j, meas.coord(i, j), meas.log_variance(i, j));
                    } else {
                        let mean = prior.coord(i, j) + k * e;
                        // k*v2 equals r2*(1-k) algebraically but avoids the
                        // cancellation in 1-k when the measurement is far
                        // more certain than the prior.
                        let var = k * v2;
                        post.set(i, j, mean, var.ln());
                    }
                }
                (false, true) => post.set(i, j, meas.coord(i, j), meas.log_variance(i, j)),
                (true, false) => post.set(i, j, prior.coord(i, j), prior.log_variance(i, j)),
                (false, false) => {}
            }
        }
    }
    Ok((post, diag))
}

/// Significance level `alpha` to the matching gate threshold: the
/// `1 - alpha` quantile of a chi-square distribution with three degrees of
/// freedom.
pub fn nis_gate_threshold(alpha: f64) -> Result<f64, FilterError> {
    if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
        return Err(FilterError::BadAlpha(alpha));
    }
    Ok(chi2_quantile(3.0, 1.0 - alpha)?)
}

/// Fuses prior and measurement with innovation-consistency gating at
/// significance `nis_alpha`.
///
/// Pixels valid in only one input pass through unchanged; pixels valid in
/// neither stay invalid.
pub fn kalman_update(
    prior: &CoordStateMap,
    meas: &MeasurementMap,
    nis_alpha: f64,
) -> Result<(CoordStateMap, FusionDiagnostics), FilterError> {
    let gate = nis_gate_threshold(nis_alpha)?;
    fuse_with_gate(prior, meas, Some(gate))
}

/// [`kalman_update`] without the consistency gate: every pixel with both
/// inputs valid is fused, however large the innovation.
pub fn kalman_update_ungated(
    prior: &CoordStateMap,
    meas: &MeasurementMap,
) -> Result<(CoordStateMap, FusionDiagnostics), FilterError> {
    fuse_with_gate(prior, meas, None)
}

/// Negative log-likelihood of the fused state against ground truth.
pub fn posterior_loss(
    posterior: &CoordStateMap,
    gt: &CoordStateMap,
) -> Result<LossBreakdown, LossError> {
    gaussian_nll(posterior, gt)
}

/// Gradients of [`posterior_loss`] with respect to the fused mean and
/// log-variance.
pub fn posterior_loss_grad(
    posterior: &CoordStateMap,
    gt: &CoordStateMap,
) -> Result<LossGradients, LossError> {
    gaussian_nll_grad(posterior, gt)
}

/// Blend weights for the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tau1: 0.2,
            tau2: 0.2,
            tau3: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), FilterError> {
        let all = [self.tau1, self.tau2, self.tau3];
        if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(FilterError::NonFinite(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|t| *t == 0.0) {
            return Err(FilterError::NonFinite(
                "at least one loss weight must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Weighted sum of the likelihood, prior, and posterior losses.
pub fn full_loss(
    l_likelihood: f64,
    l_prior: f64,
    l_posterior: f64,
    weights: &LossWeights,
) -> Result<f64, FilterError> {
    weights.validate()?;
    if ![l_likelihood, l_prior, l_posterior].iter().all(|l| l.is_finite()) {
        return Err(FilterError::NonFinite(format!(
            "loss terms ({l_likelihood}, {l_prior}, {l_posterior})"
        )));
    }
    Ok(weights.tau1 * l_likelihood + weights.tau2 * l_prior + weights.tau3 * l_posterior)
}

/// Pooled fusion rules used as comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Unweighted average of all candidates; variance is the mean variance
    /// divided by the candidate count (the variance of the average under
    /// independence).
    TPooler,
    /// Candidates weighted by softmax of the negated squared distance to
    /// the measurement mean; variance combines with squared weights.
    SWeight,
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMode::TPooler => write!(f, "tpooler"),
            BaselineMode::SWeight => write!(f, "sweight"),
        }
    }
}

/// Pools warped neighbor states with the current measurement.
///
/// Per pixel the candidate set is the measurement plus every neighbor valid
/// there; pixels where the measurement is invalid stay invalid (the
/// measurement anchors the similarity weighting).  `sim_temp` only affects
/// [`BaselineMode::SWeight`] and must be positive (infinity yields uniform
/// weights).
pub fn fuse_baseline(
    warped_neighbors: &[&CoordStateMap],
    meas: &MeasurementMap,
    mode: BaselineMode,
    sim_temp: f64,
) -> Result<CoordStateMap, FilterError> {
    if warped_neighbors.is_empty() {
        return Err(FilterError::NoNeighbors);
    }
    if sim_temp.is_nan() || sim_temp <= 0.0 {
        return Err(FilterError::BadTemperature(sim_temp));
    }
    for n in warped_neighbors {
        n.same_shape(meas)?;
    }
    let (h, w) = meas.shape();
    let mut out = CoordStateMap::new_invalid(h, w);
    let mut means: Vec<Vec3> = Vec::with_capacity(warped_neighbors.len() + 1);
    let mut vars: Vec<f64> = Vec::with_capacity(warped_neighbors.len() + 1);

    for i in 0..h {
        for j in 0..w {
            if !meas.is_valid(i, j) {
                continue;
            }
            let z = meas.coord(i, j);
            means.clear();
            vars.clear();
            means.push(z);
            vars.push(meas.variance(i, j));
            for n in warped_neighbors {
                if n.is_valid(i, j) {
                    means.push(n.coord(i, j));
                    vars.push(n.variance(i, j));
                }
            }

            let weights: Vec<f64> = match mode {
                BaselineMode::TPooler => vec![1.0 / means.len() as f64; means.len()],
                BaselineMode::SWeight => {
                    let logits: Vec<f64> = means
                        .iter()
                        .map(|m| -(m - z).norm_squared() / sim_temp)
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    exps.into_iter().map(|e| e / sum).collect()
                }
            };

            let mut mean = Vec3::zeros();
            let mut var = 0.0;
            for ((m, v), wt) in means.iter().zip(&vars).zip(&weights) {
                mean += *wt * *m;
                var += wt * wt * v;
            }
            out.set(i, j, mean, var.ln());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn single_cell(coord: Vec3, variance: f64) -> CoordStateMap {
        let mut m = CoordStateMap::new_invalid(1, 1);
        m.set(0, 0, coord, variance.ln());
        m
    }

    #[test]
    fn equal_variance_fusion_is_the_midpoint() {
        let prior = single_cell(Vec3::zeros(), 1.0);
        let meas = single_cell(Vec3::new(2.0, 0.0, 0.0), 1.0);
        let (post, diag) = kalman_update(&prior, &meas, 0.05).unwrap();
        assert!(!diag.is_rejected(0, 0));
        assert_abs_diff_eq!(diag.kalman_gain(0, 0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!((post.coord(0, 0) - Vec3::new(1.0, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.variance(0, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn perfect_measurement_dominates() {
        let prior = single_cell(Vec3::new(5.0, -1.0, 2.0), 1.0);
        let z = Vec3::new(1.0, 2.0, 3.0);
        let meas = single_cell(z, 1e-18);
        let (post, diag) = kalman_update_ungated(&prior, &meas).unwrap();
        assert!(diag.kalman_gain(0, 0).unwrap() > 1.0 - 1e-15);
        assert_abs_diff_eq!((post.coord(0, 0) - z).norm(), 0.0, epsilon = 1e-9);
    }

    /// Product-of-Gaussians oracle: precision-weighted mean and summed
    /// precisions.
    fn precision_oracle(mp: f64, r2: f64, mz: f64, v2: f64) -> (f64, f64) {
        let prec = 1.0 / r2 + 1.0 / v2;
        ((mp / r2 + mz / v2) / prec, 1.0 / prec)
    }

    /// Conditional-Gaussian oracle: for the joint of state and innovation
    /// with covariance [[r2, r2], [r2, r2 + v2]], condition on the observed
    /// innovation.
    fn conditional_oracle(mp: f64, r2: f64, mz: f64, v2: f64) -> (f64, f64) {
        let s22 = r2 + v2;
        let s12 = r2;
        let e = mz - mp;
        (mp + s12 / s22 * e, r2 - s12 * s12 / s22)
    }

    #[test]
    fn fusion_matches_both_scalar_oracles_per_axis() {
        let (h, w) = (100, 100);
        let mut prior = CoordStateMap::new_invalid(h, w);
        let mut meas = CoordStateMap::new_invalid(h, w);
        let mut rng = stream(21, "oracle", 0);
        for i in 0..h {
            for j in 0..w {
                let mp = Vec3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>(), rng.gen::<f64>());
                let mz = Vec3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>(), rng.gen::<f64>());
                let r2 = 10f64.powf(rng.gen::<f64>() * 4.0 - 3.0); // 1e-3 .. 1e1
                let v2 = 10f64.powf(rng.gen::<f64>() * 4.0 - 3.0);
                prior.set(i, j, mp, r2.ln());
                meas.set(i, j, mz, v2.ln());
            }
        }
        let (post, diag) = kalman_update_ungated(&prior, &meas).unwrap();
        for i in 0..h {
            for j in 0..w {
                let r2 = prior.variance(i, j);
                let v2 = meas.variance(i, j);
                let got_var = post.variance(i, j);
                for axis in 0..3 {
                    let (m1, s1) =
                        precision_oracle(prior.coord(i, j)[axis], r2, meas.coord(i, j)[axis], v2);
                    let (m2, s2) =
                        conditional_oracle(prior.coord(i, j)[axis], r2, meas.coord(i, j)[axis], v2);
                    let got = post.coord(i, j)[axis];
                    assert_abs_diff_eq!(got, m1, epsilon = 1e-12 * m1.abs().max(1.0));
                    assert_abs_diff_eq!(got, m2, epsilon = 1e-12 * m2.abs().max(1.0));
                    assert_abs_diff_eq!(got_var, s1, epsilon = 1e-12 * s1.max(1.0));
                    assert_abs_diff_eq!(got_var, s2, epsilon = 1e-12 * s2.max(1.0));
                }
                // Precision additivity and bracketing invariants.
                assert_abs_diff_eq!(
                    1.0 / got_var,
                    1.0 / r2 + 1.0 / v2,
                    epsilon = 1e-12 * (1.0 / r2 + 1.0 / v2)
                );
                assert!(got_var <= r2.min(v2) + 1e-15);
                assert!(diag.kalman_gain(i, j).unwrap() >= 0.0);
                assert!(diag.kalman_gain(i, j).unwrap() <= 1.0);
                for axis in 0..3 {
                    let (a, b) = (prior.coord(i, j)[axis], meas.coord(i, j)[axis]);
                    let m = post.coord(i, j)[axis];
                    assert!(m >= a.min(b) - 1e-12 && m <= a.max(b) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn role_swap_gives_identical_fusion() {
        let mut rng = stream(22, "swap", 0);
        for _ in 0..200 {
            let a = single_cell(
                Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                10f64.powf(rng.gen::<f64>() * 3.0 - 2.0),
            );
            let b = single_cell(
                Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                10f64.powf(rng.gen::<f64>() * 3.0 - 2.0),
            );
            let (ab, _) = kalman_update_ungated(&a, &b).unwrap();
            let (ba, _) = kalman_update_ungated(&b, &a).unwrap();
            assert_abs_diff_eq!((ab.coord(0, 0) - ba.coord(0, 0)).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ab.variance(0, 0), ba.variance(0, 0), epsilon = 1e-12);
        }
    }

    /// Builds an honest prior/measurement pair around a common truth with
    /// the given true and reported measurement sigmas.
    fn calibration_pair(
        h: usize,
        w: usize,
        r: f64,
        v_true: f64,
        v_reported: f64,
        seed: u64,
    ) -> (CoordStateMap, CoordStateMap) {
        let mut prior = CoordStateMap::new_invalid(h, w);
        let mut meas = CoordStateMap::new_invalid(h, w);
        let mut rng = stream(seed, "calib", 0);
        for i in 0..h {
            for j in 0..w {
                let truth = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                let np = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let nz = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                prior.set(i, j, truth + np * r, (r * r).ln());
                meas.set(i, j, truth + nz * v_true, (v_reported * v_reported).ln());
            }
        }
        (prior, meas)
    }

    #[test]
    fn honest_noise_is_rejected_at_the_nominal_rate() {
        // 112 000 pixels with exactly chi-square(3) statistics: the 5%
        // gate should fire on 5% ± 0.3% of them.
        let (prior, meas) = calibration_pair(350, 320, 0.01, 0.02, 0.02, 23);
        let (_, diag) = kalman_update(&prior, &meas, 0.05).unwrap();
        assert_eq!(diag.evaluated_count(), 112_000);
        let rate = diag.rejection_rate();
        assert!(
            (0.047..=0.053).contains(&rate),
            "rejection rate {rate} outside 5% ± 0.3%"
        );
    }

    #[test]
    fn overconfident_reporting_trips_the_gate() {
        // True sigma 0.02 reported as 0.005: the gate sees inflated
        // normalized innovations and rejects far more than the nominal 5%.
        let (prior, meas) = calibration_pair(350, 320, 0.01, 0.02, 0.005, 23);
        let (_, diag) = kalman_update(&prior, &meas, 0.05).unwrap();
        let rate = diag.rejection_rate();
        assert!(rate > 0.30, "rejection rate {rate} should exceed 30%");
    }

    #[test]
    fn rejected_pixels_fall_back_to_the_measurement() {
        let prior = single_cell(Vec3::zeros(), 1e-4);
        let z = Vec3::new(1.0, 0.0, 0.0); // NIS is colossal
        let meas = single_cell(z, 1e-4);
        let (post, diag) = kalman_update(&prior, &meas, 0.05).unwrap();
        assert!(diag.is_rejected(0, 0));
        assert_eq!(post.coord(0, 0), z);
        assert_abs_diff_eq!(post.variance(0, 0), 1e-4, epsilon = 1e-19);
        // The ungated variant fuses regardless.
        let (post_u, diag_u) = kalman_update_ungated(&prior, &meas).unwrap();
        assert!(!diag_u.is_rejected(0, 0));
        assert_abs_diff_eq!(post_u.coord(0, 0).x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_input_pixels_pass_through() {
        let mut prior = CoordStateMap::new_invalid(2, 2);
        let mut meas = CoordStateMap::new_invalid(2, 2);
        prior.set(0, 0, Vec3::new(1.0, 1.0, 1.0), (0.01f64).ln());
        meas.set(0, 1, Vec3::new(2.0, 2.0, 2.0), (0.02f64).ln());
        prior.set(1, 1, Vec3::new(3.0, 3.0, 3.0), (0.03f64).ln());
        meas.set(1, 1, Vec3::new(3.1, 3.0, 3.0), (0.03f64).ln());
        let (post, diag) = kalman_update(&prior, &meas, 0.05).unwrap();
        assert_eq!(post.coord(0, 0), prior.coord(0, 0)); // prior only
        assert_eq!(post.coord(0, 1), meas.coord(0, 1)); // measurement only
        assert!(!post.is_valid(1, 0)); // neither
        assert!(diag.is_evaluated(1, 1));
        assert!(!diag.is_evaluated(0, 0) && !diag.is_evaluated(0, 1));
        assert!(diag.innovation(0, 0).is_none());
        assert_eq!(diag.evaluated_count(), 1);
    }

    #[test]
    fn gate_threshold_matches_the_quantile() {
        let t = nis_gate_threshold(0.05).unwrap();
        assert_abs_diff_eq!(t, 7.814728, epsilon = 1e-5);
        assert!(nis_gate_threshold(0.0).is_err());
        assert!(nis_gate_threshold(1.0).is_err());
        assert!(matches!(kalman_update(
            &single_cell(Vec3::zeros(), 1.0),
            &single_cell(Vec3::zeros(), 1.0),
            -0.5,
        ), Err(FilterError::BadAlpha(_))));
    }

    #[test]
    fn posterior_loss_shares_the_likelihood_arithmetic() {
        // Exact zero at a perfect unit-variance fit.
        let gt = single_cell(Vec3::new(1.0, 2.0, 3.0), 0.0);
        let fit = single_cell(Vec3::new(1.0, 2.0, 3.0), 1.0);
        let l = posterior_loss(&fit, &gt).unwrap();
        assert_abs_diff_eq!(l.total, 0.0, epsilon = 1e-15);
        // Shared scalar case: sigma 0.5, residual norm 0.3.
        let pred = single_cell(Vec3::new(1.3, 2.0, 3.0), 0.25);
        let l = posterior_loss(&pred, &gt).unwrap();
        assert_abs_diff_eq!(l.total, -1.899_441_541_679_836, epsilon = 1e-9);
    }

    #[test]
    fn full_loss_weights_the_three_terms() {
        let w = LossWeights::default();
        assert_abs_diff_eq!(full_loss(1.0, 2.0, 3.0, &w).unwrap(), 2.4, epsilon = 1e-12);
        let only_like = LossWeights { tau1: 1.0, tau2: 0.0, tau3: 0.0 };
        assert_abs_diff_eq!(full_loss(7.5, 1.0, 2.0, &only_like).unwrap(), 7.5, epsilon = 1e-15);
        assert_abs_diff_eq!(full_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0, epsilon = 1e-15);
        assert!(full_loss(f64::NAN, 0.0, 0.0, &w).is_err());
        let zero = LossWeights { tau1: 0.0, tau2: 0.0, tau3: 0.0 };
        assert!(full_loss(1.0, 2.0, 3.0, &zero).is_err());
    }

    #[test]
    fn tpooler_averages_means_and_shrinks_variance() {
        let neighbor = single_cell(Vec3::zeros(), 0.02);
        let meas = single_cell(Vec3::new(2.0, 0.0, 0.0), 0.04);
        let out = fuse_baseline(&[&neighbor], &meas, BaselineMode::TPooler, 1.0).unwrap();
        assert_abs_diff_eq!((out.coord(0, 0) - Vec3::new(1.0, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        // mean of variances / count = ((0.02 + 0.04) / 2) / 2
        assert_abs_diff_eq!(out.variance(0, 0), 0.015, epsilon = 1e-15);
    }

    #[test]
    fn sweight_at_large_temperature_degenerates_to_tpooler() {
        let mut neighbor = CoordStateMap::new_invalid(3, 3);
        let mut meas = CoordStateMap::new_invalid(3, 3);
        let mut rng = stream(24, "sw", 0);
        for i in 0..3 {
            for j in 0..3 {
                neighbor.set(
                    i,
                    j,
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    (0.01 + 0.01 * rng.gen::<f64>()).ln(),
                );
                meas.set(
                    i,
                    j,
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    (0.01 + 0.01 * rng.gen::<f64>()).ln(),
                );
            }
        }
        let tp = fuse_baseline(&[&neighbor], &meas, BaselineMode::TPooler, 1.0).unwrap();
        let sw = fuse_baseline(&[&neighbor], &meas, BaselineMode::SWeight, 1e12).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!((tp.coord(i, j) - sw.coord(i, j)).norm(), 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(tp.variance(i, j), sw.variance(i, j), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn identical_neighbor_and_measurement_are_a_fixed_point_in_mean() {
        let v = Vec3::new(0.4, -0.2, 2.5);
        let neighbor = single_cell(v, 0.02);
        let meas = single_cell(v, 0.02);
        for mode in [BaselineMode::TPooler, BaselineMode::SWeight] {
            let out = fuse_baseline(&[&neighbor], &meas, mode, 0.01).unwrap();
            assert_abs_diff_eq!((out.coord(0, 0) - v).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(out.variance(0, 0), 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn sweight_downweights_distant_neighbors() {
        let z = Vec3::zeros();
        let near = single_cell(Vec3::new(0.05, 0.0, 0.0), 0.02);
        let far = single_cell(Vec3::new(1.0, 0.0, 0.0), 0.02);
        let meas = single_cell(z, 0.02);
        let sw_near = fuse_baseline(&[&near], &meas, BaselineMode::SWeight, 0.01).unwrap();
        let sw_far = fuse_baseline(&[&far], &meas, BaselineMode::SWeight, 0.01).unwrap();
        let tp_far = fuse_baseline(&[&far], &meas, BaselineMode::TPooler, 0.01).unwrap();
        // The distant neighbor is almost ignored while the near one still
        // pulls the mean; the pooled baseline has no such protection.
        assert!(sw_far.coord(0, 0).x < 1e-6);
        assert!(sw_near.coord(0, 0).x > 0.02);
        assert_abs_diff_eq!(tp_far.coord(0, 0).x, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn baseline_handles_missing_neighbor_pixels() {
        let mut neighbor = CoordStateMap::new_invalid(1, 2);
        neighbor.set(0, 0, Vec3::new(2.0, 0.0, 0.0), (0.02f64).ln());
        let mut meas = CoordStateMap::new_invalid(1, 2);
        meas.set(0, 0, Vec3::zeros(), (0.02f64).ln());
        meas.set(0, 1, Vec3::new(5.0, 0.0, 0.0), (0.02f64).ln());
        let out = fuse_baseline(&[&neighbor], &meas, BaselineMode::TPooler, 1.0).unwrap();
        assert_abs_diff_eq!(out.coord(0, 0).x, 1.0, epsilon = 1e-15);
        // No neighbor at (0, 1): the measurement passes through.
        assert_eq!(out.coord(0, 1), meas.coord(0, 1));
        assert_abs_diff_eq!(out.variance(0, 1), 0.02, epsilon = 1e-15);
    }

    #[test]
    fn baseline_rejects_bad_arguments() {
        let meas = single_cell(Vec3::zeros(), 0.02);
        assert!(matches!(
            fuse_baseline(&[], &meas, BaselineMode::TPooler, 1.0),
            Err(FilterError::NoNeighbors)
        ));
        let neighbor = single_cell(Vec3::zeros(), 0.02);
        assert!(matches!(
            fuse_baseline(&[&neighbor], &meas, BaselineMode::SWeight, 0.0),
            Err(FilterError::BadTemperature(_))
        ));
        let wide = CoordStateMap::new_invalid(1, 3);
        assert!(matches!(
            fuse_baseline(&[&wide], &meas, BaselineMode::TPooler, 1.0),
            Err(FilterError::Shape(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let prior = CoordStateMap::new_invalid(2, 2);
        let meas = CoordStateMap::new_invalid(2, 3);
        assert!(matches!(
            kalman_update_ungated(&prior, &meas),
            Err(FilterError::Shape(_))
        ));
    }
}
