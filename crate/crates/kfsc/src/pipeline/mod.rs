//! End-to-end orchestration: renders (or loads) an image sequence, runs the
//! per-frame predict/measure/fuse/solve loop, and writes reports.
//!
//! The submodules split the work: [`config`] holds the TOML-backed run
//! description, [`sequence`] persists rendered sequences, [`run`] executes a
//! single configuration, and [`suite`] bundles the comparison experiments.

pub mod config;
pub mod run;
pub mod sequence;
pub mod suite;

pub use config::{
    CameraConfig, DegradationSection, DumpSection, FusionMode, OracleSection, PipelineConfig,
    SceneConfig, TrajectoryConfig, LAMBDA_INDOOR_M, LAMBDA_OUTDOOR_M,
};
pub use run::{
    export_point_cloud, render_configured_sequence, run_frames, run_sequence, AggregateMetrics,
    FrameRecord, RunReport, StageTimings,
};
pub use sequence::{load_sequence, save_sequence, LoadedSequence};
pub use suite::{run_experiment_suite, CalibrationSummary, SuiteReport, SuiteRun};

use crate::io::IoError;
use crate::sim::SimError;

/// Errors produced while configuring or executing a pipeline run.
#[derive(Debug)]
pub enum PipelineError {
    /// The configuration is self-inconsistent or unparsable.
    InvalidConfig(String),
    /// Sequence rendering failed.
    Sim(SimError),
    /// Reading or writing an artifact failed.
    Io(IoError),
    /// A per-frame stage failed in a way that invalidates the whole run.
    Frame { index: usize, message: String },
    /// The requested experiment suite does not exist.
    UnknownSuite(String),
}

impl PipelineError {
    /// Wraps a stage error with the frame index it occurred at.
    pub(crate) fn at_frame(index: usize, err: impl std::fmt::Display) -> PipelineError {
        PipelineError::Frame {
            index,
            message: err.to_string(),
        }
    }
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            PipelineError::Sim(e) => write!(f, "sequence generation failed: {e}"),
            PipelineError::Io(e) => write!(f, "artifact I/O failed: {e}"),
            PipelineError::Frame { index, message } => {
                write!(f, "frame {index}: {message}")
            }
            PipelineError::UnknownSuite(name) => write!(
                f,
                "unknown suite '{name}' (expected motion_blur, tracking_loss, fusion_ablation, or calibration)"
            ),
        }
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PipelineError::Sim(e) => Some(e),
            PipelineError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        PipelineError::Sim(e)
    }
}

impl From<IoError> for PipelineError {
    fn from(e: IoError) -> Self {
        PipelineError::Io(e)
    }
}
