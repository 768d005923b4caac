//! Run configuration: a single TOML-serializable struct that describes the
//! camera, the simulated scene and trajectory, the measurement oracle, the
//! process-noise model, the fusion mode, and the pose solver settings.
//!
//! Every field has a default, so an empty TOML file (or `PipelineConfig::default()`)
//! yields a complete, runnable configuration.

use serde::{Deserialize, Serialize};

use crate::filtering::LossWeights;
use crate::geometry::{CameraIntrinsics, Vec3};
use crate::measurement::{MeasurementOracleConfig, SigmaMode};
use crate::pose::RansacConfig;
use crate::process::PriorConfig;
use crate::sim::{BlurDirection, DegradationConfig, DegradationTag, SceneModel, Trajectory};

use super::PipelineError;

/// Coordinate-uncertainty threshold (metres) suited to room-scale scenes.
pub const LAMBDA_INDOOR_M: f64 = 0.05;
/// Coordinate-uncertainty threshold (metres) suited to street-scale scenes.
pub const LAMBDA_OUTDOOR_M: f64 = 0.5;

/// Which estimator produces the per-frame coordinate map handed to the pose solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// Recursive per-pixel Kalman fusion of the temporal prior and the measurement.
    #[serde(rename = "kalman")]
    Kalman,
    /// Uniform average over the candidate set (measurement plus warped neighbours).
    #[serde(rename = "tpooler")]
    TPooler,
    /// Similarity-weighted average over the candidate set.
    #[serde(rename = "sweight")]
    SWeight,
    /// Ignore the temporal prior entirely; each frame stands alone.
    #[serde(rename = "measurement_only")]
    MeasurementOnly,
}

impl FusionMode {
    /// Stable lowercase name, used in file paths and CSV cells.
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Kalman => "kalman",
            FusionMode::TPooler => "tpooler",
            FusionMode::SWeight => "sweight",
            FusionMode::MeasurementOnly => "measurement_only",
        }
    }

    /// All modes, in the order reports enumerate them.
    pub fn all() -> [FusionMode; 4] {
        [
            FusionMode::Kalman,
            FusionMode::TPooler,
            FusionMode::SWeight,
            FusionMode::MeasurementOnly,
        ]
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kalman" => Ok(FusionMode::Kalman),
            "tpooler" => Ok(FusionMode::TPooler),
            "sweight" => Ok(FusionMode::SWeight),
            "measurement_only" => Ok(FusionMode::MeasurementOnly),
            other => Err(PipelineError::InvalidConfig(format!(
                "unknown fusion mode '{other}' (expected kalman, tpooler, sweight, or measurement_only)"
            ))),
        }
    }
}

/// Pinhole camera parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            fx: 200.0,
            fy: 200.0,
            cx: 96.0,
            cy: 72.0,
            width: 192,
            height: 144,
        }
    }
}

/// Scene selection and texture randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Scene family; `desk` is the only built-in model.
    pub kind: String,
    /// Seed for the procedural textures painted on the scene surfaces.
    pub texture_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            kind: "desk".to_string(),
            texture_seed: 7,
        }
    }
}

/// Camera path through the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Path family; `rail` (straight line with a vertical bob) is the only built-in.
    pub kind: String,
    pub frames: usize,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub look_target: [f64; 3],
    pub bob_amplitude: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            kind: "rail".to_string(),
            frames: 100,
            start: [-0.6, -0.05, -1.2],
            end: [0.6, 0.05, -1.2],
            look_target: [0.0, 0.1, 6.0],
            bob_amplitude: 0.02,
        }
    }
}

/// Optional stress factors applied while rendering the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSection {
    /// Every n-th frame is motion blurred; 0 disables blur.
    pub blur_every_n: usize,
    /// Length of the blur streak in pixels.
    pub blur_kernel_px: usize,
    /// First frame index removed by the trim, if any.
    pub trim_start: Option<usize>,
    /// One past the last frame index removed by the trim, if any.
    pub trim_end: Option<usize>,
    /// Number of small drifting foreground objects.
    pub occluders: usize,
}

impl Default for DegradationSection {
    fn default() -> Self {
        DegradationSection {
            blur_every_n: 0,
            blur_kernel_px: 30,
            trim_start: None,
            trim_end: None,
            occluders: 1,
        }
    }
}

/// Measurement-oracle noise model plus the extra degradation applied on
/// blurred frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Per-axis standard deviation of inlier coordinate noise, metres.
    pub inlier_sigma: f64,
    /// Fraction of pixels replaced by gross outliers.
    pub outlier_ratio: f64,
    /// Radius of the uniform outlier ball, metres.
    pub outlier_spread: f64,
    /// Multiplier applied to sigma at depth discontinuities.
    pub boundary_sigma_boost: f64,
    /// Ratio of reported to true standard deviation; 1.0 means honest.
    pub reported_sigma_factor: f64,
    /// Multiplier applied to the true sigma on blurred frames.
    pub blur_sigma_factor: f64,
    /// Minimum outlier ratio on blurred frames.
    pub blur_outlier_ratio: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let base = MeasurementOracleConfig::default();
        OracleSection {
            inlier_sigma: base.inlier_sigma,
            outlier_ratio: base.outlier_ratio,
            outlier_spread: base.outlier_spread,
            boundary_sigma_boost: base.boundary_sigma_boost,
            reported_sigma_factor: 1.0,
            blur_sigma_factor: 2.4,
            blur_outlier_ratio: 0.25,
        }
    }
}

impl OracleSection {
    /// Oracle settings for one frame. Blurred frames get noisier, more
    /// outlier-ridden measurements whose reported variance tracks the truth,
    /// mimicking a network that knows its input is degraded.
    pub fn for_frame(&self, blurred: bool) -> MeasurementOracleConfig {
        let mode = if (self.reported_sigma_factor - 1.0).abs() < 1e-12 {
            SigmaMode::Honest
        } else {
            SigmaMode::Misreported {
                factor: self.reported_sigma_factor,
            }
        };
        let mut cfg = MeasurementOracleConfig {
            inlier_sigma: self.inlier_sigma,
            outlier_ratio: self.outlier_ratio,
            outlier_spread: self.outlier_spread,
            boundary_sigma_boost: self.boundary_sigma_boost,
            reported_sigma_mode: mode,
        };
        if blurred {
            cfg.inlier_sigma *= self.blur_sigma_factor;
            cfg.outlier_ratio = cfg.outlier_ratio.max(self.blur_outlier_ratio);
        }
        cfg
    }
}

/// Debug-artifact switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DumpSection {
    /// Write per-pixel innovation statistics as CSV for each fused frame.
    pub diagnostics: bool,
    /// Write estimated flow fields as color-wheel PPM images.
    pub flow_images: bool,
}

/// Complete description of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Directory that receives reports and artifacts.
    pub output_dir: String,
    pub fusion_mode: FusionMode,
    /// Significance level of the innovation consistency gate.
    pub nis_alpha: f64,
    /// Whether the Kalman mode gates inconsistent measurements at all.
    pub nis_gating: bool,
    /// Softmax temperature (square metres) for similarity-weighted fusion.
    pub sim_temp: f64,
    /// Grid cell size in pixels.
    pub stride: usize,
    /// Correlation search window in cells (odd).
    pub window_size: usize,
    /// Softmax temperature for turning match costs into flow.
    pub flow_temperature: f64,
    pub camera: CameraConfig,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    pub degradation: DegradationSection,
    pub oracle: OracleSection,
    pub process_noise: PriorConfig,
    pub loss_weights: LossWeights,
    pub ransac: RansacConfig,
    pub dump: DumpSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            output_dir: "out".to_string(),
            fusion_mode: FusionMode::Kalman,
            nis_alpha: 0.05,
            nis_gating: true,
            sim_temp: 1e-3,
            stride: 8,
            window_size: 9,
            flow_temperature: 0.05,
            camera: CameraConfig::default(),
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
            degradation: DegradationSection::default(),
            oracle: OracleSection::default(),
            process_noise: PriorConfig::default(),
            loss_weights: LossWeights::default(),
            ransac: RansacConfig::default(),
            dump: DumpSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text)
            .map_err(|e| PipelineError::InvalidConfig(format!("TOML parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a TOML config file.
    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serializes the effective configuration back to TOML.
    pub fn to_toml_string(&self) -> Result<String, PipelineError> {
        toml::to_string_pretty(self)
            .map_err(|e| PipelineError::InvalidConfig(format!("TOML serialize error: {e}")))
    }

    /// Checks cross-field consistency; every builder method assumes this passed.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.camera.fx <= 0.0 || self.camera.fy <= 0.0 {
            return bad(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.camera.fx, self.camera.fy
            ));
        }
        if self.camera.width == 0 || self.camera.height == 0 {
            return bad("image dimensions must be nonzero".to_string());
        }
        if self.stride == 0
            || self.camera.width % self.stride != 0
            || self.camera.height % self.stride != 0
        {
            return bad(format!(
                "stride {} must be nonzero and divide the image size {}x{}",
                self.stride, self.camera.width, self.camera.height
            ));
        }
        if self.window_size % 2 == 0 || self.window_size == 0 {
            return bad(format!("window_size must be odd, got {}", self.window_size));
        }
        if !(self.nis_alpha > 0.0 && self.nis_alpha < 1.0) {
            return bad(format!(
                "nis_alpha must lie in (0, 1), got {}",
                self.nis_alpha
            ));
        }
        if !(self.sim_temp > 0.0) {
            return bad(format!("sim_temp must be positive, got {}", self.sim_temp));
        }
        if !(self.flow_temperature > 0.0) {
            return bad(format!(
                "flow_temperature must be positive, got {}",
                self.flow_temperature
            ));
        }
        if self.scene.kind != "desk" {
            return bad(format!(
                "unknown scene kind '{}' (expected 'desk')",
                self.scene.kind
            ));
        }
        if self.trajectory.kind != "rail" {
            return bad(format!(
                "unknown trajectory kind '{}' (expected 'rail')",
                self.trajectory.kind
            ));
        }
        if self.trajectory.frames < 2 {
            return bad(format!(
                "trajectory needs at least 2 frames, got {}",
                self.trajectory.frames
            ));
        }
        match (self.degradation.trim_start, self.degradation.trim_end) {
            (Some(s), Some(e)) => {
                if s >= e || e > self.trajectory.frames {
                    return bad(format!(
                        "trim range [{s}, {e}) must be nonempty and inside 0..{}",
                        self.trajectory.frames
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return bad(
                    "trim_start and trim_end must be given together or not at all".to_string(),
                )
            }
        }
        if self.oracle.reported_sigma_factor <= 0.0 {
            return bad(format!(
                "reported_sigma_factor must be positive, got {}",
                self.oracle.reported_sigma_factor
            ));
        }
        if self.oracle.blur_sigma_factor < 1.0 {
            return bad(format!(
                "blur_sigma_factor must be at least 1, got {}",
                self.oracle.blur_sigma_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.oracle.blur_outlier_ratio) {
            return bad(format!(
                "blur_outlier_ratio must lie in [0, 1], got {}",
                self.oracle.blur_outlier_ratio
            ));
        }
        self.oracle
            .for_frame(false)
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.process_noise
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.loss_weights
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.ransac
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Camera model assembled from the `[camera]` section.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.camera.fx,
            fy: self.camera.fy,
            cx: self.camera.cx,
            cy: self.camera.cy,
            width: self.camera.width,
            height: self.camera.height,
        }
    }

    /// Scene model selected by the `[scene]` section.
    pub fn scene_model(&self) -> SceneModel {
        SceneModel::desk_scene(self.scene.texture_seed)
    }

    /// Camera path selected by the `[trajectory]` section.
    pub fn trajectory_model(&self) -> Result<Trajectory, PipelineError> {
        let t = &self.trajectory;
        Ok(Trajectory::rail(
            t.frames,
            Vec3::new(t.start[0], t.start[1], t.start[2]),
            Vec3::new(t.end[0], t.end[1], t.end[2]),
            Vec3::new(t.look_target[0], t.look_target[1], t.look_target[2]),
            t.bob_amplitude,
        )?)
    }

    /// Degradation settings for the renderer.
    pub fn degradation_model(&self) -> DegradationConfig {
        let d = &self.degradation;
        DegradationConfig {
            blur_every_n: d.blur_every_n,
            blur_kernel_px: d.blur_kernel_px,
            blur_direction: BlurDirection::Auto,
            trim_range: match (d.trim_start, d.trim_end) {
                (Some(s), Some(e)) => Some((s, e)),
                _ => None,
            },
            occluder_count: d.occluders,
        }
    }

    /// Oracle settings for one rendered frame (blur coupling applied via tags).
    pub fn oracle_for(&self, tags: &[DegradationTag]) -> MeasurementOracleConfig {
        self.oracle
            .for_frame(tags.contains(&DegradationTag::Blurred))
    }

    /// Grid height in cells.
    pub fn grid_height(&self) -> usize {
        self.camera.height / self.stride
    }

    /// Grid width in cells.
    pub fn grid_width(&self) -> usize {
        self.camera.width / self.stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = PipelineConfig::default();
        cfg.validate().expect("default config must be valid");
        assert_eq!(cfg.grid_height(), 18);
        assert_eq!(cfg.grid_width(), 24);
    }

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").expect("empty TOML");
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 99;
        cfg.fusion_mode = FusionMode::SWeight;
        cfg.degradation.trim_start = Some(10);
        cfg.degradation.trim_end = Some(20);
        cfg.oracle.reported_sigma_factor = 0.25;
        let text = cfg.to_toml_string().expect("serialize");
        let back = PipelineConfig::from_toml_str(&text).expect("parse");
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml_str("definitely_not_a_field = 3\n")
            .expect_err("unknown key must fail");
        assert!(matches!(err, PipelineError::InvalidConfig(_)));
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 5\nfusion_mode = \"tpooler\"\n\n[trajectory]\nframes = 12\n",
        )
        .expect("partial TOML");
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.fusion_mode, FusionMode::TPooler);
        assert_eq!(cfg.trajectory.frames, 12);
        assert_eq!(cfg.camera, CameraConfig::default());
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.stride = 7;
        assert!(cfg.validate().is_err(), "stride must divide image size");

        let mut cfg = PipelineConfig::default();
        cfg.window_size = 8;
        assert!(cfg.validate().is_err(), "window must be odd");

        let mut cfg = PipelineConfig::default();
        cfg.degradation.trim_start = Some(5);
        assert!(cfg.validate().is_err(), "half-open trim must be rejected");

        let mut cfg = PipelineConfig::default();
        cfg.degradation.trim_start = Some(20);
        cfg.degradation.trim_end = Some(10);
        assert!(cfg.validate().is_err(), "reversed trim must be rejected");
    }

    #[test]
    fn blurred_frames_get_degraded_oracle() {
        let cfg = PipelineConfig::default();
        let clean = cfg.oracle.for_frame(false);
        let blurred = cfg.oracle.for_frame(true);
        assert!(blurred.inlier_sigma > 2.0 * clean.inlier_sigma);
        assert!(blurred.outlier_ratio >= 0.25);
        assert_eq!(blurred.reported_sigma_mode, SigmaMode::Honest);
    }

    #[test]
    fn misreport_factor_switches_sigma_mode() {
        let mut cfg = PipelineConfig::default();
        cfg.oracle.reported_sigma_factor = 0.25;
        match cfg.oracle.for_frame(false).reported_sigma_mode {
            SigmaMode::Misreported { factor } => assert!((factor - 0.25).abs() < 1e-15),
            other => panic!("expected misreported mode, got {other:?}"),
        }
    }

    #[test]
    fn fusion_mode_names_round_trip() {
        for mode in FusionMode::all() {
            let parsed: FusionMode = mode.name().parse().expect("parse own name");
            assert_eq!(parsed, mode);
        }
        assert!("bogus".parse::<FusionMode>().is_err());
    }
}
