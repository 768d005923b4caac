//! Canned comparison experiments: each suite runs a small grid of
//! configurations derived from a base config and writes side-by-side CSV
//! summaries.
//!
//! * `motion_blur` — clean vs periodically blurred sequences, temporal fusion
//!   vs single-frame measurements, five seeds each;
//! * `tracking_loss` — a sequence with a removed span, consistency gate on
//!   vs off;
//! * `fusion_ablation` — all four fusion modes on the same sequence;
//! * `calibration` — innovation-gate rejection rates under honest vs
//!   under-reported measurement uncertainty.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::filtering::kalman_update;
use crate::map::CoordStateMap;
use crate::measurement::{synthesize_measurement, MeasurementOracleConfig, SigmaMode};
use crate::rng::{derive_seed, stream};
use crate::sim::generate_sequence;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{FusionMode, PipelineConfig};
use super::run::{run_sequence, RunReport};
use super::PipelineError;

/// Number of seeds the blur suite repeats each arm over.
pub const MOTION_BLUR_SEEDS: u64 = 5;

/// One executed cell of a suite grid.
#[derive(Debug, Clone)]
pub struct SuiteRun {
    /// Unique cell name (also the output subdirectory).
    pub cell: String,
    /// Group key for pooling across seeds, e.g. `blurred-kalman`.
    pub arm: String,
    pub seed: u64,
    pub report: RunReport,
}

/// Rejection-rate comparison produced by the calibration suite.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CalibrationSummary {
    pub honest_evaluated_px: usize,
    pub honest_rejected_px: usize,
    pub honest_rejection_rate: f64,
    pub misreported_evaluated_px: usize,
    pub misreported_rejected_px: usize,
    pub misreported_rejection_rate: f64,
    /// Ratio of reported to true sigma in the misreported arm.
    pub misreport_factor: f64,
}

/// Everything a suite produced, with per-run reports kept in memory.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub runs: Vec<SuiteRun>,
    pub calibration: Option<CalibrationSummary>,
}

impl SuiteReport {
    /// Translation errors of all solved frames across every run whose arm
    /// matches, pooled in run order.
    pub fn pooled_translation_errors(&self, arm: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.arm == arm)
            .flat_map(|r| r.report.translation_errors())
            .collect()
    }

    /// Runs belonging to one arm, in execution order.
    pub fn arm_runs(&self, arm: &str) -> Vec<&SuiteRun> {
        self.runs.iter().filter(|r| r.arm == arm).collect()
    }
}

/// Runs the named suite. Cell outputs land under
/// `<base output_dir>/<suite>/<cell>/`; the suite-level `comparison.csv` and
/// `cdf.csv` land under `<base output_dir>/<suite>/`.
pub fn run_experiment_suite(
    name: &str,
    base: &PipelineConfig,
    seed: u64,
) -> Result<SuiteReport, PipelineError> {
    base.validate()?;
    let root = Path::new(&base.output_dir).join(name);
    fs::create_dir_all(&root).map_err(|e| {
        PipelineError::InvalidConfig(format!("cannot create suite directory: {e}"))
    })?;
    match name {
        "motion_blur" => motion_blur_suite(base, seed, &root),
        "tracking_loss" => tracking_loss_suite(base, seed, &root),
        "fusion_ablation" => fusion_ablation_suite(base, seed, &root),
        "calibration" => calibration_suite(base, seed, &root),
        other => Err(PipelineError::UnknownSuite(other.to_string())),
    }
}

fn cell_config(base: &PipelineConfig, root: &Path, cell: &str, seed: u64) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.output_dir = root.join(cell).to_string_lossy().into_owned();
    cfg
}

fn execute_cell(
    runs: &mut Vec<SuiteRun>,
    cfg: &PipelineConfig,
    cell: String,
    arm: String,
) -> Result<(), PipelineError> {
    let report = run_sequence(cfg)?;
    runs.push(SuiteRun {
        cell,
        arm,
        seed: cfg.seed,
        report,
    });
    Ok(())
}

fn motion_blur_suite(
    base: &PipelineConfig,
    seed: u64,
    root: &Path,
) -> Result<SuiteReport, PipelineError> {
    let mut runs = Vec::new();
    for s in 0..MOTION_BLUR_SEEDS {
        let run_seed = derive_seed(seed, "suite-seed", s);
        for blurred in [false, true] {
            for mode in [FusionMode::Kalman, FusionMode::MeasurementOnly] {
                let variant = if blurred { "blurred" } else { "clean" };
                let cell = format!("{variant}-{mode}-s{s}");
                let arm = format!("{variant}-{mode}");
                let mut cfg = cell_config(base, root, &cell, run_seed);
                cfg.fusion_mode = mode;
                cfg.degradation.blur_every_n = if blurred { 10 } else { 0 };
                execute_cell(&mut runs, &cfg, cell, arm)?;
            }
        }
    }
    let report = SuiteReport {
        name: "motion_blur".to_string(),
        runs,
        calibration: None,
    };
    write_comparison_csv(&report, &root.join("comparison.csv"))?;
    write_cdf_csv(&report, &root.join("cdf.csv"))?;
    Ok(report)
}

fn tracking_loss_suite(
    base: &PipelineConfig,
    seed: u64,
    root: &Path,
) -> Result<SuiteReport, PipelineError> {
    let frames = base.trajectory.frames;
    // Default trim: drop roughly the third quarter of the path so the
    // restart frame faces a large, unannounced viewpoint jump.
    let (trim_start, trim_end) = match (base.degradation.trim_start, base.degradation.trim_end) {
        (Some(s), Some(e)) => (s, e),
        _ => (frames * 45 / 100, frames * 80 / 100),
    };
    if trim_start == 0 || trim_end <= trim_start || trim_end >= frames {
        return Err(PipelineError::InvalidConfig(format!(
            "tracking-loss trim [{trim_start}, {trim_end}) needs frames before and after it"
        )));
    }
    let mut runs = Vec::new();
    for gated in [true, false] {
        let cell = if gated { "gated" } else { "ungated" };
        let mut cfg = cell_config(base, root, cell, seed);
        cfg.fusion_mode = FusionMode::Kalman;
        cfg.nis_gating = gated;
        cfg.degradation.trim_start = Some(trim_start);
        cfg.degradation.trim_end = Some(trim_end);
        execute_cell(&mut runs, &cfg, cell.to_string(), cell.to_string())?;
    }
    let report = SuiteReport {
        name: "tracking_loss".to_string(),
        runs,
        calibration: None,
    };
    write_comparison_csv(&report, &root.join("comparison.csv"))?;
    write_cdf_csv(&report, &root.join("cdf.csv"))?;
    Ok(report)
}

fn fusion_ablation_suite(
    base: &PipelineConfig,
    seed: u64,
    root: &Path,
) -> Result<SuiteReport, PipelineError> {
    let mut runs = Vec::new();
    for mode in FusionMode::all() {
        let cell = mode.name().to_string();
        let mut cfg = cell_config(base, root, &cell, seed);
        cfg.fusion_mode = mode;
        execute_cell(&mut runs, &cfg, cell.clone(), cell)?;
    }
    let report = SuiteReport {
        name: "fusion_ablation".to_string(),
        runs,
        calibration: None,
    };
    write_comparison_csv(&report, &root.join("comparison.csv"))?;
    write_cdf_csv(&report, &root.join("cdf.csv"))?;
    Ok(report)
}

/// Reported-sigma factor exercised by the misreported calibration arm.
const CALIBRATION_MISREPORT_FACTOR: f64 = 0.25;
/// Prior standard deviation used by the calibration harness, metres.
const CALIBRATION_PRIOR_SIGMA: f64 = 0.01;
/// Minimum number of fused pixels each arm must aggregate.
const CALIBRATION_MIN_PIXELS: usize = 100_000;

/// Measures the consistency gate's rejection rate in a controlled setting:
/// the prior is ground truth plus Gaussian noise of exactly the advertised
/// variance, and the measurement oracle adds pure Gaussian noise (no
/// outliers). With honest reporting the innovation statistic follows its
/// nominal chi-square law, so the rejection rate should match the gate's
/// significance level; under-reporting measurement sigma inflates it.
fn calibration_suite(
    base: &PipelineConfig,
    seed: u64,
    root: &Path,
) -> Result<SuiteReport, PipelineError> {
    // One static render supplies the ground-truth map all trials share.
    let mut static_cfg = base.clone();
    static_cfg.trajectory.frames = 2;
    static_cfg.trajectory.end = static_cfg.trajectory.start;
    static_cfg.trajectory.bob_amplitude = 0.0;
    static_cfg.degradation = Default::default();
    static_cfg.degradation.occluders = 0;
    let frames = generate_sequence(
        &static_cfg.scene_model(),
        &static_cfg.trajectory_model()?,
        &static_cfg.intrinsics(),
        &static_cfg.degradation_model(),
        static_cfg.stride,
        derive_seed(seed, "calib-render", 0),
    )?;
    let gt = &frames[0].gt_coords;
    let cells = gt.count_valid();
    if cells == 0 {
        return Err(PipelineError::InvalidConfig(
            "calibration scene rendered no valid cells".to_string(),
        ));
    }
    let trials = CALIBRATION_MIN_PIXELS.div_ceil(cells) + 5;

    let honest = calibration_arm(gt, base, 1.0, trials, derive_seed(seed, "calib-honest", 0))?;
    let misreported = calibration_arm(
        gt,
        base,
        CALIBRATION_MISREPORT_FACTOR,
        trials,
        derive_seed(seed, "calib-misreported", 0),
    )?;

    let summary = CalibrationSummary {
        honest_evaluated_px: honest.0,
        honest_rejected_px: honest.1,
        honest_rejection_rate: honest.1 as f64 / honest.0 as f64,
        misreported_evaluated_px: misreported.0,
        misreported_rejected_px: misreported.1,
        misreported_rejection_rate: misreported.1 as f64 / misreported.0 as f64,
        misreport_factor: CALIBRATION_MISREPORT_FACTOR,
    };

    let mut csv = String::from("cell,evaluated_px,rejected_px,rejection_rate\n");
    let _ = writeln!(
        csv,
        "honest,{},{},{}",
        summary.honest_evaluated_px, summary.honest_rejected_px, summary.honest_rejection_rate
    );
    let _ = writeln!(
        csv,
        "misreported,{},{},{}",
        summary.misreported_evaluated_px,
        summary.misreported_rejected_px,
        summary.misreported_rejection_rate
    );
    fs::write(root.join("comparison.csv"), csv).map_err(|e| {
        PipelineError::InvalidConfig(format!("cannot write calibration comparison: {e}"))
    })?;

    Ok(SuiteReport {
        name: "calibration".to_string(),
        runs: Vec::new(),
        calibration: Some(summary),
    })
}

/// Runs one calibration arm; returns `(evaluated, rejected)` pixel counts.
fn calibration_arm(
    gt: &CoordStateMap,
    base: &PipelineConfig,
    report_factor: f64,
    trials: usize,
    seed: u64,
) -> Result<(usize, usize), PipelineError> {
    let (h, w) = gt.shape();
    let oracle = MeasurementOracleConfig {
        inlier_sigma: base.oracle.inlier_sigma,
        outlier_ratio: 0.0,
        outlier_spread: base.oracle.outlier_spread,
        boundary_sigma_boost: 1.0,
        reported_sigma_mode: if (report_factor - 1.0).abs() < 1e-12 {
            SigmaMode::Honest
        } else {
            SigmaMode::Misreported {
                factor: report_factor,
            }
        },
    };
    let prior_log_var = (CALIBRATION_PRIOR_SIGMA * CALIBRATION_PRIOR_SIGMA).ln();
    let mut evaluated = 0;
    let mut rejected = 0;
    for k in 0..trials {
        let mut rng = stream(seed, "calib-prior", k as u64);
        let mut prior = CoordStateMap::new_invalid(h, w);
        for i in 0..h {
            for j in 0..w {
                if !gt.is_valid(i, j) {
                    continue;
                }
                let noise = crate::geometry::Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ) * CALIBRATION_PRIOR_SIGMA;
                prior.set(i, j, gt.coord(i, j) + noise, prior_log_var);
            }
        }
        let meas = synthesize_measurement(gt, &oracle, derive_seed(seed, "calib-meas", k as u64))
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        let (_, diag) = kalman_update(&prior, &meas, base.nis_alpha)
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        evaluated += diag.evaluated_count();
        rejected += diag.rejected_count();
    }
    Ok((evaluated, rejected))
}

fn opt_cell<T: std::fmt::Display>(value: &Option<T>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => String::new(),
    }
}

fn write_comparison_csv(report: &SuiteReport, path: &PathBuf) -> Result<(), PipelineError> {
    let mut out = String::from(
        "cell,arm,seed,fusion_mode,nis_gating,frames,failed_frames,median_translation_m,\
         median_rotation_deg,frac_5cm_5deg,coord_error_mean_m,coord_error_std_m,\
         mean_nis_rejection_rate\n",
    );
    for run in &report.runs {
        let a = &run.report.aggregate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            run.cell,
            run.arm,
            run.seed,
            run.report.config.fusion_mode,
            run.report.config.nis_gating,
            a.frames,
            a.failed_frames,
            opt_cell(&a.median_translation_m),
            opt_cell(&a.median_rotation_deg),
            opt_cell(&a.frac_5cm_5deg),
            opt_cell(&a.coord_error_mean_m),
            opt_cell(&a.coord_error_std_m),
            opt_cell(&a.mean_nis_rejection_rate),
        );
    }
    fs::write(path, out)
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot write comparison.csv: {e}")))
}

/// Per-arm pose-error distribution, written as nearest-rank percentiles of
/// the translation error pooled over all runs in the arm.
fn write_cdf_csv(report: &SuiteReport, path: &PathBuf) -> Result<(), PipelineError> {
    let mut arms: Vec<String> = Vec::new();
    for run in &report.runs {
        if !arms.contains(&run.arm) {
            arms.push(run.arm.clone());
        }
    }
    let mut out = String::from("arm,percentile,translation_err_m\n");
    for arm in &arms {
        let mut errors = report.pooled_translation_errors(arm);
        if errors.is_empty() {
            continue;
        }
        errors.sort_by(f64::total_cmp);
        let n = errors.len();
        for p in 1..=100usize {
            let rank = (p * n).div_ceil(100).max(1) - 1;
            let _ = writeln!(out, "{arm},{p},{}", errors[rank]);
        }
    }
    fs::write(path, out)
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot write cdf.csv: {e}")))
}
