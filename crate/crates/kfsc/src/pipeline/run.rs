//! Executing one configured run: render or accept a sequence, then per frame
//! predict (flow + warp), measure, fuse, and solve for the camera pose.
//!
//! Artifacts written under the output directory:
//!
//! * `report.csv` — one row per frame, byte-deterministic for a fixed config;
//! * `summary.json` — config echo, aggregate metrics, and stage timings
//!   (timings stay out of the CSV so reruns compare byte-for-byte);
//! * `posteriors/frame_NNNN.kfsc` — fused coordinate map per frame;
//! * optional flow renderings and per-pixel fusion diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::filtering::{
    full_loss, fuse_baseline, kalman_update, kalman_update_ungated, posterior_loss, BaselineMode,
    FusionDiagnostics,
};
use crate::geometry::Vec3;
use crate::io::{write_coord_map, write_flow_ppm, write_ply};
use crate::map::{CoordStateMap, FlowField};
use crate::measurement::{likelihood_loss, synthesize_measurement};
use crate::pose::{gather_correspondences, pose_error, ransac_pnp, PoseError};
use crate::process::{
    assemble_prior, build_cost_volume, extract_features, flow_from_volume, prior_loss, warp_state,
    FeatureMap,
};
use crate::rng::derive_seed;
use crate::sim::{generate_sequence, DegradationTag, FrameBundle};

use super::config::{FusionMode, PipelineConfig};
use super::PipelineError;

/// Wall-clock cost of each pipeline stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub render_ms: f64,
    pub process_ms: f64,
    pub measure_ms: f64,
    pub fuse_ms: f64,
    pub solve_ms: f64,
    pub io_ms: f64,
    pub total_ms: f64,
}

/// Everything recorded about one frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    /// Position in the emitted sequence.
    pub frame: usize,
    /// Index on the untrimmed camera path.
    pub source_index: usize,
    pub blurred: bool,
    pub trim_restart: bool,
    /// Whether pose recovery succeeded on this frame.
    pub pose_ok: bool,
    /// Camera-center error against ground truth, metres.
    pub translation_err_m: Option<f64>,
    /// Orientation error against ground truth, degrees.
    pub rotation_err_deg: Option<f64>,
    /// Correspondences that passed the uncertainty gate.
    pub correspondences: Option<usize>,
    pub inliers: Option<usize>,
    pub ransac_iterations: Option<usize>,
    pub mean_reproj_err_px: Option<f64>,
    /// Mean per-cell coordinate error of the fused map, metres.
    pub coord_mean_err_m: Option<f64>,
    pub coord_std_err_m: Option<f64>,
    pub valid_cells: usize,
    /// Fraction of fused pixels whose innovation failed the consistency gate.
    pub nis_rejection_rate: Option<f64>,
    /// Pixels where both prior and measurement were valid.
    pub nis_evaluated: Option<usize>,
    pub likelihood_loss: f64,
    pub prior_loss: Option<f64>,
    pub posterior_loss: f64,
    pub full_loss: f64,
}

/// Whole-run statistics over the per-frame records.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    pub frames: usize,
    pub failed_frames: usize,
    pub median_translation_m: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    /// Fraction of solved poses within 5 cm and 5 degrees.
    pub frac_5cm_5deg: Option<f64>,
    /// Coordinate error pooled over every cell of every frame.
    pub coord_error_mean_m: Option<f64>,
    pub coord_error_std_m: Option<f64>,
    pub mean_nis_rejection_rate: Option<f64>,
}

/// Output of one run: per-frame rows plus aggregates and timings.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub frames: Vec<FrameRecord>,
    pub aggregate: AggregateMetrics,
    pub timings: StageTimings,
}

impl RunReport {
    /// Translation errors of all solved frames, metres, in frame order.
    pub fn translation_errors(&self) -> Vec<f64> {
        self.frames
            .iter()
            .filter_map(|r| r.translation_err_m)
            .collect()
    }

    /// Rotation errors of all solved frames, degrees, in frame order.
    pub fn rotation_errors(&self) -> Vec<f64> {
        self.frames
            .iter()
            .filter_map(|r| r.rotation_err_deg)
            .collect()
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Renders the sequence described by the config's scene, trajectory, and
/// degradation sections. The render seed derives from the master seed, so a
/// saved sequence replays exactly like a live one.
pub fn render_configured_sequence(cfg: &PipelineConfig) -> Result<Vec<FrameBundle>, PipelineError> {
    cfg.validate()?;
    Ok(generate_sequence(
        &cfg.scene_model(),
        &cfg.trajectory_model()?,
        &cfg.intrinsics(),
        &cfg.degradation_model(),
        cfg.stride,
        derive_seed(cfg.seed, "sequence", 0),
    )?)
}

/// Renders the configured sequence and runs the full loop on it.
pub fn run_sequence(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let render_start = Instant::now();
    let frames = render_configured_sequence(cfg)?;
    let render_ms = render_start.elapsed().as_secs_f64() * 1e3;
    let mut report = run_frames(cfg, &frames)?;
    report.timings.render_ms = render_ms;
    report.timings.total_ms += render_ms;
    write_summary(cfg, &report)?;
    Ok(report)
}

/// Runs the loop on an existing sequence (rendered live or loaded from disk).
/// The frames must match the configured camera and stride.
pub fn run_frames(
    cfg: &PipelineConfig,
    frames: &[FrameBundle],
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(PipelineError::InvalidConfig(
            "cannot run on an empty sequence".to_string(),
        ));
    }
    let intrinsics = cfg.intrinsics();
    let grid = (cfg.grid_height(), cfg.grid_width());
    let out_dir = Path::new(&cfg.output_dir);
    let posterior_dir = out_dir.join("posteriors");
    fs::create_dir_all(&posterior_dir).map_err(|e| {
        PipelineError::InvalidConfig(format!(
            "cannot create output directory {}: {e}",
            posterior_dir.display()
        ))
    })?;
    if cfg.dump.flow_images {
        fs::create_dir_all(out_dir.join("flow"))
            .map_err(|e| PipelineError::InvalidConfig(format!("cannot create flow dir: {e}")))?;
    }
    if cfg.dump.diagnostics {
        fs::create_dir_all(out_dir.join("diagnostics")).map_err(|e| {
            PipelineError::InvalidConfig(format!("cannot create diagnostics dir: {e}"))
        })?;
    }

    let total_start = Instant::now();
    let mut timings = StageTimings::default();
    let mut records: Vec<FrameRecord> = Vec::with_capacity(frames.len());
    let mut posteriors: Vec<CoordStateMap> = Vec::with_capacity(frames.len());
    let mut prev: Option<(FeatureMap, CoordStateMap)> = None;

    for (t, frame) in frames.iter().enumerate() {
        if frame.gt_coords.shape() != grid {
            return Err(PipelineError::Frame {
                index: t,
                message: format!(
                    "ground-truth grid is {:?}, config expects {:?}",
                    frame.gt_coords.shape(),
                    grid
                ),
            });
        }

        // Predict: match against the previous frame and transport the state.
        let process_start = Instant::now();
        let features =
            extract_features(&frame.image, cfg.stride).map_err(|e| PipelineError::at_frame(t, e))?;
        let predicted: Option<(CoordStateMap, FlowField)> = match &prev {
            None => None,
            Some((prev_features, prev_posterior)) => {
                let volume_fwd = build_cost_volume(&features, prev_features, cfg.window_size)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                let flow_fwd = flow_from_volume(&volume_fwd, cfg.flow_temperature)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                let volume_bwd = build_cost_volume(prev_features, &features, cfg.window_size)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                let flow_bwd = flow_from_volume(&volume_bwd, cfg.flow_temperature)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                let warped = warp_state(prev_posterior, &flow_fwd)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                let prior = assemble_prior(&warped, &flow_fwd, Some(&flow_bwd), &cfg.process_noise)
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                Some((prior, flow_fwd))
            }
        };
        timings.process_ms += process_start.elapsed().as_secs_f64() * 1e3;

        // Measure: draw the per-frame observation from the oracle.
        let measure_start = Instant::now();
        let oracle_cfg = cfg.oracle_for(&frame.tags);
        let measurement = synthesize_measurement(
            &frame.gt_coords,
            &oracle_cfg,
            derive_seed(cfg.seed, "meas", t as u64),
        )
        .map_err(|e| PipelineError::at_frame(t, e))?;
        timings.measure_ms += measure_start.elapsed().as_secs_f64() * 1e3;

        // Fuse according to the configured estimator.
        let fuse_start = Instant::now();
        let prior_map = predicted.as_ref().map(|(prior, _)| prior);
        let (posterior, diagnostics): (CoordStateMap, Option<FusionDiagnostics>) =
            match (cfg.fusion_mode, prior_map) {
                (FusionMode::MeasurementOnly, _) | (_, None) => (measurement.clone(), None),
                (FusionMode::Kalman, Some(prior)) => {
                    let (post, diag) = if cfg.nis_gating {
                        kalman_update(prior, &measurement, cfg.nis_alpha)
                    } else {
                        kalman_update_ungated(prior, &measurement)
                    }
                    .map_err(|e| PipelineError::at_frame(t, e))?;
                    (post, Some(diag))
                }
                (FusionMode::TPooler, Some(prior)) => (
                    fuse_baseline(&[prior], &measurement, BaselineMode::TPooler, cfg.sim_temp)
                        .map_err(|e| PipelineError::at_frame(t, e))?,
                    None,
                ),
                (FusionMode::SWeight, Some(prior)) => (
                    fuse_baseline(&[prior], &measurement, BaselineMode::SWeight, cfg.sim_temp)
                        .map_err(|e| PipelineError::at_frame(t, e))?,
                    None,
                ),
            };

        let l_like = likelihood_loss(&measurement, &frame.gt_coords)
            .map_err(|e| PipelineError::at_frame(t, e))?
            .total;
        let l_prior = match prior_map {
            Some(prior) => Some(
                prior_loss(prior, &frame.gt_coords)
                    .map_err(|e| PipelineError::at_frame(t, e))?
                    .total,
            ),
            None => None,
        };
        let l_post = posterior_loss(&posterior, &frame.gt_coords)
            .map_err(|e| PipelineError::at_frame(t, e))?
            .total;
        let l_full = full_loss(l_like, l_prior.unwrap_or(0.0), l_post, &cfg.loss_weights)
            .map_err(|e| PipelineError::at_frame(t, e))?;
        timings.fuse_ms += fuse_start.elapsed().as_secs_f64() * 1e3;

        // Solve: recover the camera pose from the fused map.
        let solve_start = Instant::now();
        let correspondences;
        let mut pose_fields = None;
        match gather_correspondences(&posterior, &intrinsics, cfg.ransac.lambda_m, cfg.stride) {
            Ok(corrs) => {
                correspondences = Some(corrs.len());
                match ransac_pnp(
                    &corrs,
                    &intrinsics,
                    &cfg.ransac,
                    derive_seed(cfg.seed, "ransac", t as u64),
                ) {
                    Ok(estimate) => {
                        let (t_err, r_err) = pose_error(&estimate.pose, &frame.gt_pose);
                        pose_fields = Some((
                            t_err,
                            r_err,
                            estimate.inlier_count(),
                            estimate.iterations_used,
                            estimate.mean_reproj_err_px,
                        ));
                    }
                    Err(PoseError::NoConsensus { .. }) => {}
                    Err(e) => return Err(PipelineError::at_frame(t, e)),
                }
            }
            Err(PoseError::TooFewCorrespondences { found, .. }) => {
                correspondences = Some(found);
            }
            Err(e) => return Err(PipelineError::at_frame(t, e)),
        }
        timings.solve_ms += solve_start.elapsed().as_secs_f64() * 1e3;

        // Record and persist.
        let coord_stats =
            crate::pose::coordinate_error_stats(&[(&posterior, &frame.gt_coords)]).ok();
        let (t_err, r_err, inliers, iters, reproj) = match pose_fields {
            Some((t_err, r_err, inl, it, rp)) => {
                (Some(t_err), Some(r_err), Some(inl), Some(it), Some(rp))
            }
            None => (None, None, None, None, None),
        };
        records.push(FrameRecord {
            frame: t,
            source_index: frame.source_index,
            blurred: frame.has_tag(DegradationTag::Blurred),
            trim_restart: frame.has_tag(DegradationTag::TrimmedRestart),
            pose_ok: pose_fields.is_some(),
            translation_err_m: t_err,
            rotation_err_deg: r_err,
            correspondences,
            inliers,
            ransac_iterations: iters,
            mean_reproj_err_px: reproj,
            coord_mean_err_m: coord_stats.map(|(m, _)| m),
            coord_std_err_m: coord_stats.map(|(_, s)| s),
            valid_cells: posterior.count_valid(),
            nis_rejection_rate: diagnostics.as_ref().map(|d| d.rejection_rate()),
            nis_evaluated: diagnostics.as_ref().map(|d| d.evaluated_count()),
            likelihood_loss: l_like,
            prior_loss: l_prior,
            posterior_loss: l_post,
            full_loss: l_full,
        });

        let io_start = Instant::now();
        write_coord_map(&posterior, &posterior_dir.join(format!("frame_{t:04}.kfsc")))?;
        if cfg.dump.flow_images {
            if let Some((_, flow)) = &predicted {
                let max_px = (cfg.window_size / 2) as f64 * cfg.stride as f64;
                write_flow_ppm(flow, max_px, &out_dir.join(format!("flow/frame_{t:04}.ppm")))?;
            }
        }
        if cfg.dump.diagnostics {
            if let Some(diag) = &diagnostics {
                write_diagnostics_csv(diag, &out_dir.join(format!("diagnostics/frame_{t:04}.csv")))?;
            }
        }
        timings.io_ms += io_start.elapsed().as_secs_f64() * 1e3;

        posteriors.push(posterior);
        prev = Some((features, posteriors.last().expect("just pushed").clone()));
    }

    // Aggregates.
    let mut trans: Vec<f64> = records.iter().filter_map(|r| r.translation_err_m).collect();
    let mut rots: Vec<f64> = records.iter().filter_map(|r| r.rotation_err_deg).collect();
    let solved = trans.len();
    let frac = if solved > 0 {
        let hits = records
            .iter()
            .filter(|r| matches!((r.translation_err_m, r.rotation_err_deg), (Some(t), Some(rr)) if t < 0.05 && rr < 5.0))
            .count();
        Some(hits as f64 / solved as f64)
    } else {
        None
    };
    let pairs: Vec<(&CoordStateMap, &CoordStateMap)> = posteriors
        .iter()
        .zip(frames)
        .map(|(p, f)| (p, &f.gt_coords))
        .collect();
    let pooled = crate::pose::coordinate_error_stats(&pairs).ok();
    let rejection_rates: Vec<f64> = records.iter().filter_map(|r| r.nis_rejection_rate).collect();
    let aggregate = AggregateMetrics {
        frames: records.len(),
        failed_frames: records.iter().filter(|r| !r.pose_ok).count(),
        median_translation_m: median(&mut trans),
        median_rotation_deg: median(&mut rots),
        frac_5cm_5deg: frac,
        coord_error_mean_m: pooled.map(|(m, _)| m),
        coord_error_std_m: pooled.map(|(_, s)| s),
        mean_nis_rejection_rate: if rejection_rates.is_empty() {
            None
        } else {
            Some(rejection_rates.iter().sum::<f64>() / rejection_rates.len() as f64)
        },
    };

    timings.total_ms = total_start.elapsed().as_secs_f64() * 1e3;
    let report = RunReport {
        config: cfg.clone(),
        frames: records,
        aggregate,
        timings,
    };
    fs::write(out_dir.join("report.csv"), report_csv(&report.frames))
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot write report.csv: {e}")))?;
    write_summary(cfg, &report)?;
    Ok(report)
}

/// Writes `summary.json` (config echo, aggregates, timings) into the run's
/// output directory. Called automatically by [`run_sequence`].
pub(crate) fn write_summary(cfg: &PipelineConfig, report: &RunReport) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a PipelineConfig,
        aggregate: &'a AggregateMetrics,
        timings: &'a StageTimings,
    }
    let doc = Summary {
        config: cfg,
        aggregate: &report.aggregate,
        timings: &report.timings,
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot serialize summary: {e}")))?;
    let path = Path::new(&cfg.output_dir).join("summary.json");
    fs::write(&path, text)
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot write summary.json: {e}")))?;
    Ok(())
}

fn push_opt<T: std::fmt::Display>(line: &mut String, value: &Option<T>) {
    match value {
        Some(v) => {
            let _ = write!(line, ",{v}");
        }
        None => line.push(','),
    }
}

/// Renders the per-frame records as CSV. Timings are deliberately absent so
/// two runs of the same configuration produce identical bytes.
pub fn report_csv(records: &[FrameRecord]) -> String {
    let mut out = String::new();
    out.push_str(
        "frame,source_index,blurred,trim_restart,pose_ok,translation_err_m,rotation_err_deg,\
         correspondences,inliers,ransac_iterations,mean_reproj_err_px,coord_mean_err_m,\
         coord_std_err_m,valid_cells,nis_rejection_rate,nis_evaluated,likelihood_loss,\
         prior_loss,posterior_loss,full_loss\n",
    );
    for r in records {
        let mut line = format!(
            "{},{},{},{},{}",
            r.frame, r.source_index, r.blurred, r.trim_restart, r.pose_ok
        );
        push_opt(&mut line, &r.translation_err_m);
        push_opt(&mut line, &r.rotation_err_deg);
        push_opt(&mut line, &r.correspondences);
        push_opt(&mut line, &r.inliers);
        push_opt(&mut line, &r.ransac_iterations);
        push_opt(&mut line, &r.mean_reproj_err_px);
        push_opt(&mut line, &r.coord_mean_err_m);
        push_opt(&mut line, &r.coord_std_err_m);
        let _ = write!(line, ",{}", r.valid_cells);
        push_opt(&mut line, &r.nis_rejection_rate);
        push_opt(&mut line, &r.nis_evaluated);
        let _ = write!(line, ",{}", r.likelihood_loss);
        push_opt(&mut line, &r.prior_loss);
        let _ = write!(line, ",{},{}\n", r.posterior_loss, r.full_loss);
        out.push_str(&line);
    }
    out
}

fn write_diagnostics_csv(diag: &FusionDiagnostics, path: &Path) -> Result<(), PipelineError> {
    let (h, w) = diag.shape();
    let mut out = String::from("row,col,nis,kalman_gain,rejected\n");
    for i in 0..h {
        for j in 0..w {
            if let (Some(nis), Some(gain)) = (diag.nis(i, j), diag.kalman_gain(i, j)) {
                let _ = writeln!(out, "{i},{j},{nis},{gain},{}", diag.is_rejected(i, j));
            }
        }
    }
    fs::write(path, out)
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot write diagnostics: {e}")))?;
    Ok(())
}

/// Collects every cell whose coordinate uncertainty (standard deviation) is
/// at most `lambda_m` metres and writes them as a PLY point cloud, shaded by
/// confidence. Returns the number of points written; a threshold of zero
/// writes an empty (header-only) cloud.
pub fn export_point_cloud(
    maps: &[&CoordStateMap],
    lambda_m: f64,
    path: &Path,
) -> Result<usize, PipelineError> {
    if !(lambda_m.is_finite() && lambda_m >= 0.0) {
        return Err(PipelineError::InvalidConfig(format!(
            "point-cloud threshold must be non-negative, got {lambda_m}"
        )));
    }
    let mut points: Vec<(Vec3, f64)> = Vec::new();
    for map in maps {
        for (_, _, coord, log_var) in map.iter_valid() {
            let var = log_var.exp();
            if var.sqrt() <= lambda_m {
                points.push((coord, var));
            }
        }
    }
    write_ply(&points, path)?;
    Ok(points.len())
}
