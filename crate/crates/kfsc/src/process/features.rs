//! Grid-aligned patch descriptors for frame-to-frame matching.

use crate::map::GrayImage;
use crate::process::ProcessError;

/// Gradient channels appended to every descriptor (pooled |dx| and |dy|).
pub const SOBEL_CHANNELS: usize = 2;

/// Squared-norm floor below which a patch is considered textureless and its
/// descriptor undefined.
const MIN_DESCRIPTOR_ENERGY: f64 = 1e-8;

/// Dense descriptors on a `height x width` cell grid, one cell per
/// `stride x stride` image patch.
///
/// A descriptor holds the patch's mean-removed intensities followed by two
/// pooled gradient magnitudes, L2-normalized.  Patches with essentially no
/// texture are flagged undefined so the matcher can skip them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    stride: usize,
    dim: usize,
    data: Vec<f64>,
    defined: Vec<bool>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Descriptor length: `stride * stride + SOBEL_CHANNELS`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_defined(&self, row: usize, col: usize) -> bool {
        self.defined[row * self.width + col]
    }

    /// Descriptor slice, or `None` for textureless cells.
    pub fn descriptor(&self, row: usize, col: usize) -> Option<&[f64]> {
        let k = row * self.width + col;
        if !self.defined[k] {
            return None;
        }
        Some(&self.data[k * self.dim..(k + 1) * self.dim])
    }

    pub fn count_defined(&self) -> usize {
        self.defined.iter().filter(|d| **d).count()
    }
}

/// L1 distance between two descriptors of equal length.
pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sobel_at(image: &GrayImage, row: isize, col: isize) -> (f64, f64) {
    let p = |dr: isize, dc: isize| image.get_clamped(row + dr, col + dc);
    let gx = -p(-1, -1) + p(-1, 1) - 2.0 * p(0, -1) + 2.0 * p(0, 1) - p(1, -1) + p(1, 1);
    let gy = -p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1) + p(1, -1) + 2.0 * p(1, 0) + p(1, 1);
    (gx, gy)
}

/// Computes descriptors for every `stride x stride` patch of `image`.
///
/// The image dimensions must be positive multiples of `stride`.
pub fn extract_features(image: &GrayImage, stride: usize) -> Result<FeatureMap, ProcessError> {
    let (h, w) = (image.height(), image.width());
    if stride == 0 || h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
        return Err(ProcessError::BadStride {
            stride,
            height: h,
            width: w,
        });
    }
    let (gh, gw) = (h / stride, w / stride);
    let dim = stride * stride + SOBEL_CHANNELS;
    let mut data = vec![0.0; gh * gw * dim];
    let mut defined = vec![false; gh * gw];

    for gi in 0..gh {
        for gj in 0..gw {
            let k = gi * gw + gj;
            let desc = &mut data[k * dim..(k + 1) * dim];
            let (r0, c0) = (gi * stride, gj * stride);

            let mut mean = 0.0;
            for r in 0..stride {
                for c in 0..stride {
                    mean += image.get(r0 + r, c0 + c);
                }
            }
            mean /= (stride * stride) as f64;

            let mut abs_gx = 0.0;
            let mut abs_gy = 0.0;
            for r in 0..stride {
                for c in 0..stride {
                    desc[r * stride + c] = image.get(r0 + r, c0 + c) - mean;
                    let (gx, gy) = sobel_at(image, (r0 + r) as isize, (c0 + c) as isize);
                    abs_gx += gx.abs();
                    abs_gy += gy.abs();
                }
            }
            let n = (stride * stride) as f64;
            desc[stride * stride] = abs_gx / n;
            desc[stride * stride + 1] = abs_gy / n;

            let energy: f64 = desc.iter().map(|v| v * v).sum();
            if energy >= MIN_DESCRIPTOR_ENERGY {
                let norm = energy.sqrt();
                for v in desc.iter_mut() {
                    *v /= norm;
                }
                defined[k] = true;
            }
        }
    }

    Ok(FeatureMap {
        height: gh,
        width: gw,
        stride,
        dim,
        data,
        defined,
    })
}
