//! Synthetic sequence generation with exact ground truth.
//!
//! A [`SceneModel`] of textured quads is observed by a camera moving along a
//! [`Trajectory`].  Rendering produces, per frame, a grayscale image plus
//! ground-truth scene coordinates, flow and pose on the label grid.
//! [`DegradationConfig`] injects the stress factors used by the experiment
//! suites: periodic motion blur, a trimmed (removed) frame range simulating
//! tracking loss, and dynamic occluders.

mod render;
mod scene;

pub use render::{apply_motion_blur, mean_flow_direction, render_frame, MIN_SCENE_COVERAGE};
pub use scene::{fbm, DynamicObject, Hit, SceneModel, TexturedQuad};

use std::error::Error;
use std::fmt;

use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3};
use crate::map::{CoordStateMap, FlowField, GrayImage};
use crate::rng::derive_seed;

#[derive(Debug)]
pub enum SimError {
    /// Too little scene geometry visible in a frame.
    EmptyView { coverage: f64 },
    /// Same error annotated with the frame that failed.
    EmptyViewAt { frame: usize, coverage: f64 },
    InvalidStride {
        width: usize,
        height: usize,
        stride: usize,
    },
    InvalidTrajectory(String),
    InvalidTrim(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::EmptyView { coverage } => {
                write!(f, "only {:.1}% of rays hit scene geometry", coverage * 100.0)
            }
            SimError::EmptyViewAt { frame, coverage } => write!(
                f,
                "frame {frame}: only {:.1}% of rays hit scene geometry",
                coverage * 100.0
            ),
            SimError::InvalidStride {
                width,
                height,
                stride,
            } => write!(f, "stride {stride} does not divide image size {width}x{height}"),
            SimError::InvalidTrajectory(msg) => write!(f, "invalid trajectory: {msg}"),
            SimError::InvalidTrim(msg) => write!(f, "invalid trim range: {msg}"),
        }
    }
}

impl Error for SimError {}

/// Degradations applied to a rendered frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationTag {
    Blurred,
    /// First frame after a removed range; the preceding frame is not the
    /// temporal neighbor it appears to be.
    TrimmedRestart,
}

impl fmt::Display for DegradationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationTag::Blurred => write!(f, "blurred"),
            DegradationTag::TrimmedRestart => write!(f, "trimmed_restart"),
        }
    }
}

/// One rendered frame with its ground truth.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    /// Position in the emitted sequence (after trimming).
    pub index: usize,
    /// Index in the un-trimmed trajectory this frame was rendered from.
    pub source_index: usize,
    pub timestamp: f64,
    pub image: GrayImage,
    /// Ground-truth scene coordinates on the label grid (zero log-variance).
    pub gt_coords: CoordStateMap,
    /// Ground-truth flow from the previous emitted frame (absent on the
    /// first frame).
    pub gt_flow: Option<FlowField>,
    pub gt_pose: Pose,
    pub tags: Vec<DegradationTag>,
}

impl FrameBundle {
    pub fn has_tag(&self, tag: DegradationTag) -> bool {
        self.tags.contains(&tag)
    }
}

/// Blur direction policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurDirection {
    /// Mean ground-truth flow direction of the frame (horizontal fallback).
    Auto,
    Fixed { dx: f64, dy: f64 },
}

/// Stress factors injected while generating a sequence.
#[derive(Debug, Clone)]
pub struct DegradationConfig {
    /// Blur every n-th emitted frame (1-based multiples of `n`); 0 disables.
    pub blur_every_n: usize,
    pub blur_kernel_px: usize,
    pub blur_direction: BlurDirection,
    /// Inclusive range of source frame indices to remove.
    pub trim_range: Option<(usize, usize)>,
    /// Number of dynamic occluder quads added to the scene.
    pub occluder_count: usize,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            blur_every_n: 0,
            blur_kernel_px: 30,
            blur_direction: BlurDirection::Auto,
            trim_range: None,
            occluder_count: 1,
        }
    }
}

/// Camera poses with strictly increasing timestamps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Vec<f64>,
}

/// Velocity limits enforced when constructing trajectories.
pub const MAX_LINEAR_SPEED: f64 = 1.0; // m per time unit
pub const MAX_ANGULAR_SPEED: f64 = 0.5; // rad per time unit

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self, SimError> {
        if poses.is_empty() {
            return Err(SimError::InvalidTrajectory("no poses".into()));
        }
        if poses.len() != timestamps.len() {
            return Err(SimError::InvalidTrajectory(format!(
                "{} poses but {} timestamps",
                poses.len(),
                timestamps.len()
            )));
        }
        for k in 1..poses.len() {
            let dt = timestamps[k] - timestamps[k - 1];
            if dt <= 0.0 {
                return Err(SimError::InvalidTrajectory(format!(
                    "timestamps not strictly increasing at index {k}"
                )));
            }
            let lin = (poses[k].camera_center() - poses[k - 1].camera_center()).norm() / dt;
            let ang = poses[k].rotation_angle_to(&poses[k - 1]) / dt;
            if lin > MAX_LINEAR_SPEED || ang > MAX_ANGULAR_SPEED {
                return Err(SimError::InvalidTrajectory(format!(
                    "motion at index {k} exceeds velocity limits ({lin:.3} m/u, {ang:.3} rad/u)"
                )));
            }
        }
        Ok(Trajectory { poses, timestamps })
    }

    /// Straight camera rail from `start` to `end` with a gentle vertical bob,
    /// always oriented towards `look_target`.  Timestamps are frame indices.
    pub fn rail(
        frames: usize,
        start: Vec3,
        end: Vec3,
        look_target: Vec3,
        bob_amplitude: f64,
    ) -> Result<Self, SimError> {
        if frames == 0 {
            return Err(SimError::InvalidTrajectory("no frames".into()));
        }
        let mut poses = Vec::with_capacity(frames);
        let mut timestamps = Vec::with_capacity(frames);
        for k in 0..frames {
            let s = if frames == 1 {
                0.0
            } else {
                k as f64 / (frames - 1) as f64
            };
            let mut eye = start + (end - start) * s;
            eye.y += bob_amplitude * (2.0 * std::f64::consts::PI * 2.0 * s).sin();
            eye.z += 0.5 * bob_amplitude * (2.0 * std::f64::consts::PI * 3.0 * s).cos();
            poses.push(Pose::look_at(eye, look_target, Vec3::new(0.0, -1.0, 0.0)));
            timestamps.push(k as f64);
        }
        Trajectory::new(poses, timestamps)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, k: usize) -> &Pose {
        &self.poses[k]
    }

    pub fn timestamp(&self, k: usize) -> f64 {
        self.timestamps[k]
    }
}

/// Renders the whole sequence with degradations applied.
///
/// Frames inside `trim_range` are removed before rendering; the first frame
/// after the gap is tagged [`DegradationTag::TrimmedRestart`] and its ground
/// truth flow refers to the last frame before the gap.  When
/// `blur_every_n = n > 0`, every n-th emitted frame (1-based: frames n, 2n,
/// ...) is blurred with a `blur_kernel_px`-tap line kernel.  Occluder
/// placement is derived from `seed`.
pub fn generate_sequence(
    scene: &SceneModel,
    trajectory: &Trajectory,
    intrinsics: &CameraIntrinsics,
    degradation: &DegradationConfig,
    stride: usize,
    seed: u64,
) -> Result<Vec<FrameBundle>, SimError> {
    let kept: Vec<usize> = match degradation.trim_range {
        None => (0..trajectory.len()).collect(),
        Some((lo, hi)) => {
            if lo > hi || hi >= trajectory.len() {
                return Err(SimError::InvalidTrim(format!(
                    "range {lo}..={hi} out of bounds for {} frames",
                    trajectory.len()
                )));
            }
            let kept: Vec<usize> = (0..trajectory.len())
                .filter(|k| *k < lo || *k > hi)
                .collect();
            if kept.len() < 2 {
                return Err(SimError::InvalidTrim(
                    "trimming leaves fewer than two frames".into(),
                ));
            }
            kept
        }
    };

    let scene = scene
        .clone()
        .with_occluders(degradation.occluder_count, derive_seed(seed, "occluders", 0));

    let mut bundles = Vec::with_capacity(kept.len());
    let mut prev: Option<(usize, Pose, f64)> = None;
    for (emit_idx, &src_idx) in kept.iter().enumerate() {
        let pose = trajectory.pose(src_idx);
        let time = trajectory.timestamp(src_idx);
        let prev_ref = prev.as_ref().map(|(_, p, t)| (p, *t));
        let mut bundle = render_frame(&scene, pose, prev_ref, intrinsics, time, stride)
            .map_err(|e| match e {
                SimError::EmptyView { coverage } => SimError::EmptyViewAt {
                    frame: emit_idx,
                    coverage,
                },
                other => other,
            })?;
        bundle.index = emit_idx;
        bundle.source_index = src_idx;
        if let Some((prev_src, _, _)) = prev {
            if src_idx - prev_src > 1 {
                bundle.tags.push(DegradationTag::TrimmedRestart);
            }
        }
        if degradation.blur_every_n > 0 && (emit_idx + 1) % degradation.blur_every_n == 0 {
            let dir = match degradation.blur_direction {
                BlurDirection::Auto => mean_flow_direction(bundle.gt_flow.as_ref()),
                BlurDirection::Fixed { dx, dy } => Vec2::new(dx, dy),
            };
            render::blur_frame(&mut bundle, degradation.blur_kernel_px, dir);
        }
        prev = Some((src_idx, *pose, time));
        bundles.push(bundle);
    }
    Ok(bundles)
}
