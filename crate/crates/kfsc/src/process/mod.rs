//! Temporal prediction: feature matching, flow, warping, and the prior.
//!
//! This module turns a pair of grayscale frames into a predicted coordinate
//! map for the current frame.  The stages are:
//!
//! 1. [`extract_features`] — patch descriptors on a regular grid.
//! 2. [`build_cost_volume`] — matching costs over a window of offsets.
//! 3. [`flow_from_volume`] — soft-argmin flow from the cost volume.
//! 4. [`warp_state`] — resample the previous posterior along the flow.
//! 5. [`assemble_prior`] — add process noise and occlusion handling to turn
//!    the warped state into the prior for the fusion step.

mod features;
mod flow;
mod prior;
mod warp;

pub use features::{extract_features, FeatureMap, SOBEL_CHANNELS};
pub use flow::{build_cost_volume, flow_from_volume, CostVolume};
pub use prior::{assemble_prior, prior_loss, prior_loss_grad, PriorConfig};
pub use warp::{sample_flow_bilinear, warp_state};

use std::error::Error;
use std::fmt;

#[derive(Debug, PartialEq)]
pub enum ProcessError {
    /// Image dimensions must be positive multiples of the stride.
    BadStride {
        stride: usize,
        height: usize,
        width: usize,
    },
    /// The matching window must be an odd positive cell count.
    WindowNotOdd(usize),
    NonPositiveTemperature(f64),
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    StrideMismatch {
        expected: f64,
        got: f64,
    },
    InvalidConfig(String),
}

impl fmt::Display for ProcessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessError::BadStride {
                stride,
                height,
                width,
            } => write!(
                f,
                "stride {stride} does not evenly tile a {height}x{width} image"
            ),
            ProcessError::WindowNotOdd(w) => {
                write!(f, "matching window must be odd and positive, got {w}")
            }
            ProcessError::NonPositiveTemperature(t) => {
                write!(f, "softmax temperature must be positive, got {t}")
            }
            ProcessError::ShapeMismatch { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            ProcessError::StrideMismatch { expected, got } => {
                write!(f, "stride mismatch: expected {expected}, got {got}")
            }
            ProcessError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl Error for ProcessError {}
