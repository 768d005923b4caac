//! Command-line front end for the temporal scene-coordinate fusion pipeline.
//!
//! Verbs:
//!
//! * `simulate`   — render a synthetic sequence and save it to disk;
//! * `run`        — execute the fusion pipeline on a live or saved sequence;
//! * `suite`      — run one of the canned comparison experiments;
//! * `export-ply` — turn a previous run's confident map cells into a point cloud.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kfsc::io::read_coord_map;
use kfsc::map::CoordStateMap;
use kfsc::pipeline::{
    export_point_cloud, load_sequence, render_configured_sequence, run_experiment_suite,
    run_frames, run_sequence, save_sequence, FusionMode, PipelineConfig, PipelineError, RunReport,
};

#[derive(Parser)]
#[command(
    name = "kfsc",
    version,
    about = "Temporal fusion of per-pixel scene-coordinate maps with pose recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every verb that builds a pipeline configuration.
#[derive(Args)]
struct ConfigOpts {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured synthetic sequence and write it to a directory.
    Simulate {
        #[command(flatten)]
        config: ConfigOpts,
        /// Directory receiving images, ground-truth maps, flows, and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fusion pipeline and write per-frame reports.
    Run {
        #[command(flatten)]
        config: ConfigOpts,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fusion mode override: kalman, tpooler, sweight, or measurement_only.
        #[arg(long)]
        mode: Option<String>,
        /// Correspondence uncertainty gate override, metres.
        #[arg(long)]
        lambda: Option<f64>,
        /// Maximum RANSAC iterations override.
        #[arg(long)]
        ransac_iters: Option<usize>,
        /// RANSAC inlier reprojection threshold override, pixels.
        #[arg(long)]
        inlier_px: Option<f64>,
        /// Run on a sequence previously written by `simulate` instead of
        /// rendering one; adopts that sequence's camera and grid stride.
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Also write per-pixel fusion diagnostics CSVs.
        #[arg(long)]
        dump_diagnostics: bool,
    },
    /// Run a canned experiment suite: motion_blur, tracking_loss,
    /// fusion_ablation, or calibration.
    Suite {
        /// Suite name.
        name: String,
        #[command(flatten)]
        config: ConfigOpts,
        /// Directory that receives one subdirectory per suite cell.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export confident posterior cells from a previous run as a PLY cloud.
    ExportPly {
        /// Output directory of a previous `run` (contains `posteriors/`).
        #[arg(long)]
        run_dir: PathBuf,
        /// Keep cells whose coordinate standard deviation is below this, metres.
        #[arg(long)]
        lambda: f64,
        /// Path of the PLY file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_report_summary(report: &RunReport) {
    let a = &report.aggregate;
    println!(
        "{} frames, {} failed poses",
        a.frames, a.failed_frames
    );
    if let (Some(t), Some(r)) = (a.median_translation_m, a.median_rotation_deg) {
        println!("median pose error: {:.4} m / {:.3} deg", t, r);
    }
    if let Some(f) = a.frac_5cm_5deg {
        println!("within 5 cm / 5 deg: {:.1}%", 100.0 * f);
    }
    if let Some(m) = a.coord_error_mean_m {
        println!("mean coordinate error: {:.4} m", m);
    }
    println!("output: {}", report.config.output_dir);
}

fn cmd_simulate(config: ConfigOpts, out: PathBuf) -> Result<(), PipelineError> {
    let cfg = config.load()?;
    let frames = render_configured_sequence(&cfg)?;
    save_sequence(&frames, &cfg.intrinsics(), cfg.stride, &out)?;
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: ConfigOpts,
    out: Option<PathBuf>,
    mode: Option<String>,
    lambda: Option<f64>,
    ransac_iters: Option<usize>,
    inlier_px: Option<f64>,
    sequence: Option<PathBuf>,
    dump_diagnostics: bool,
) -> Result<(), PipelineError> {
    let mut cfg = config.load()?;
    if let Some(out) = out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(mode) = mode {
        cfg.fusion_mode = mode.parse::<FusionMode>()?;
    }
    if let Some(lambda) = lambda {
        cfg.ransac.lambda_m = lambda;
    }
    if let Some(iters) = ransac_iters {
        cfg.ransac.max_iterations = iters;
    }
    if let Some(px) = inlier_px {
        cfg.ransac.inlier_threshold_px = px;
    }
    cfg.dump.diagnostics |= dump_diagnostics;

    let report = match sequence {
        Some(dir) => {
            let loaded = load_sequence(&dir)?;
            cfg.camera.fx = loaded.intrinsics.fx;
            cfg.camera.fy = loaded.intrinsics.fy;
            cfg.camera.cx = loaded.intrinsics.cx;
            cfg.camera.cy = loaded.intrinsics.cy;
            cfg.camera.width = loaded.intrinsics.width;
            cfg.camera.height = loaded.intrinsics.height;
            cfg.stride = loaded.stride;
            cfg.validate()?;
            run_frames(&cfg, &loaded.frames)?
        }
        None => run_sequence(&cfg)?,
    };
    print_report_summary(&report);
    Ok(())
}

fn cmd_suite(name: String, config: ConfigOpts, out: Option<PathBuf>) -> Result<(), PipelineError> {
    let mut cfg = config.load()?;
    if let Some(out) = out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    let seed = cfg.seed;
    let report = run_experiment_suite(&name, &cfg, seed)?;
    println!("suite {} finished: {} runs", report.name, report.runs.len());
    for run in &report.runs {
        let a = &run.report.aggregate;
        match (a.median_translation_m, a.median_rotation_deg) {
            (Some(t), Some(r)) => println!(
                "  {:<28} median {:.4} m / {:.3} deg, {} failed",
                run.cell, t, r, a.failed_frames
            ),
            _ => println!("  {:<28} no solved poses", run.cell),
        }
    }
    if let Some(cal) = &report.calibration {
        println!(
            "  honest rejection rate      {:.4} ({} px)",
            cal.honest_rejection_rate, cal.honest_evaluated_px
        );
        println!(
            "  misreported rejection rate {:.4} ({} px)",
            cal.misreported_rejection_rate, cal.misreported_evaluated_px
        );
    }
    Ok(())
}

fn cmd_export_ply(run_dir: PathBuf, lambda: f64, out: PathBuf) -> Result<(), PipelineError> {
    let posterior_dir = run_dir.join("posteriors");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&posterior_dir)
        .map_err(|e| {
            PipelineError::InvalidConfig(format!(
                "cannot read {}: {e}",
                posterior_dir.display()
            ))
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "kfsc"))
        .collect();
    paths.sort();
    let maps: Vec<CoordStateMap> = paths
        .iter()
        .map(|p: &PathBuf| read_coord_map(p))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&CoordStateMap> = maps.iter().collect();
    let count = export_point_cloud(&refs, lambda, Path::new(&out))?;
    println!(
        "wrote {count} points from {} maps to {}",
        maps.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(config, out),
        Command::Run {
            config,
            out,
            mode,
            lambda,
            ransac_iters,
            inlier_px,
            sequence,
            dump_diagnostics,
        } => cmd_run(
            config,
            out,
            mode,
            lambda,
            ransac_iters,
            inlier_px,
            sequence,
            dump_diagnostics,
        ),
        Command::Suite { name, config, out } => cmd_suite(name, config, out),
        Command::ExportPly {
            run_dir,
            lambda,
            out,
        } => cmd_export_ply(run_dir, lambda, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                PipelineError::InvalidConfig(_) | PipelineError::UnknownSuite(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(3),
            }
        }
    }
}
