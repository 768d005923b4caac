//! Temporal fusion of per-pixel 2D-3D correspondence maps.
//!
//! The crate tracks a dense map of scene coordinates (one 3D point plus an
//! uncertainty per grid cell) across a video sequence.  Each frame, a
//! measurement map is fused with a motion-compensated prediction from the
//! previous frame through a bank of independent per-pixel Kalman filters,
//! and the fused map feeds a RANSAC + P3P camera pose solver.
//!
//! Module overview:
//!
//! * [`geometry`] — rigid transforms, pinhole projection.
//! * [`map`] — grid containers: coordinate/uncertainty maps, flow fields, images.
//! * [`io`] — binary map format, PGM/PPM images, PLY clouds, sequence manifests.
//! * [`sim`] — synthetic scene renderer producing images with ground truth.
//! * [`measurement`] — controllable measurement oracle and likelihood scoring.
//! * [`process`] — features, cost volumes, optical flow, state warping, priors.
//! * [`filtering`] — per-pixel Kalman update with innovation gating, baselines.
//! * [`stats`] — chi-square quantiles used by the innovation gate.
//! * [`loss`] — shared Gaussian negative-log-likelihood evaluator.
//! * [`pose`] — correspondence gathering, P3P, RANSAC, refinement, metrics.
//! * [`pipeline`] — end-to-end sequence runner, experiment suites, reports.

pub mod filtering;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod map;
pub mod measurement;
pub mod pipeline;
pub mod pose;
pub mod process;
pub mod rng;
pub mod sim;
pub mod stats;
