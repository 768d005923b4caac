//! Frame rendering: images, ground-truth coordinate maps and flow.

use crate::geometry::{project, CameraIntrinsics, Pose, Vec2};
use crate::map::{CoordStateMap, FlowField, GrayImage};

use super::scene::SceneModel;
use super::{DegradationTag, FrameBundle, SimError};

/// Fraction of image rays that must hit geometry for a frame to be usable.
pub const MIN_SCENE_COVERAGE: f64 = 0.2;

/// Renders one frame: full-resolution image plus ground truth on the
/// label grid (`height/stride × width/stride`, cell centers at
/// `((j+0.5)·stride, (i+0.5)·stride)`).
///
/// `prev` is the pose and scene time of the preceding frame; when given,
/// ground-truth flow (previous → current, full-resolution pixels) is
/// produced for every cell whose surface point is static and visible in
/// both frames.
pub fn render_frame(
    scene: &SceneModel,
    pose: &Pose,
    prev: Option<(&Pose, f64)>,
    intrinsics: &CameraIntrinsics,
    time: f64,
    stride: usize,
) -> Result<FrameBundle, SimError> {
    let width = intrinsics.width;
    let height = intrinsics.height;
    if stride == 0 || width % stride != 0 || height % stride != 0 {
        return Err(SimError::InvalidStride {
            width,
            height,
            stride,
        });
    }
    let center = pose.camera_center();
    let rot_inv = pose.rotation().inverse();

    let mut image = GrayImage::new(height, width);
    let mut hits = 0usize;
    for y in 0..height {
        for x in 0..width {
            let dir_cam = intrinsics.ray_direction(Vec2::new(x as f64 + 0.5, y as f64 + 0.5));
            let dir_world = rot_inv * dir_cam;
            if let Some(hit) = scene.raycast(center, dir_world, time) {
                image.set(y, x, hit.intensity);
                hits += 1;
            }
        }
    }
    let coverage = hits as f64 / (width * height) as f64;
    if coverage < MIN_SCENE_COVERAGE {
        return Err(SimError::EmptyView { coverage });
    }

    let gh = height / stride;
    let gw = width / stride;
    let mut gt_coords = CoordStateMap::new_invalid(gh, gw);
    let mut gt_flow = prev.map(|_| FlowField::new_invalid(gh, gw, stride as f64));
    for i in 0..gh {
        for j in 0..gw {
            let px = Vec2::new(
                (j as f64 + 0.5) * stride as f64,
                (i as f64 + 0.5) * stride as f64,
            );
            let dir_world = rot_inv * intrinsics.ray_direction(px);
            let Some(hit) = scene.raycast(center, dir_world, time) else {
                continue;
            };
            gt_coords.set(i, j, hit.point, 0.0);

            let (Some(flow), Some((prev_pose, prev_time))) = (gt_flow.as_mut(), prev) else {
                continue;
            };
            // Flow is defined only for static surface points visible in
            // both frames; dynamic surfaces and occluded points stay
            // invalid.
            if hit.dynamic {
                continue;
            }
            let Ok((prev_px, _)) = project(hit.point, prev_pose, intrinsics) else {
                continue;
            };
            if !intrinsics.contains(prev_px) {
                continue;
            }
            let prev_center = prev_pose.camera_center();
            let to_point = hit.point - prev_center;
            let dist = to_point.norm();
            let visible = scene
                .raycast(prev_center, to_point / dist, prev_time)
                .map_or(false, |h| h.t >= dist - 1e-6);
            if !visible {
                continue;
            }
            flow.set(i, j, px - prev_px);
        }
    }

    Ok(FrameBundle {
        index: 0,
        source_index: 0,
        timestamp: time,
        image,
        gt_coords,
        gt_flow,
        gt_pose: *pose,
        tags: Vec::new(),
    })
}

/// Convolves the image with a normalized line kernel of `kernel_px` taps
/// along `direction` (bilinear samples, borders clamped).  A single tap or a
/// zero direction returns the image unchanged.
pub fn apply_motion_blur(image: &GrayImage, kernel_px: usize, direction: Vec2) -> GrayImage {
    let norm = direction.norm();
    if kernel_px <= 1 || norm < 1e-12 {
        return image.clone();
    }
    let step = direction / norm;
    let mut out = GrayImage::new(image.height(), image.width());
    let half = (kernel_px as f64 - 1.0) / 2.0;
    let inv_k = 1.0 / kernel_px as f64;
    for y in 0..image.height() {
        for x in 0..image.width() {
            let mut acc = 0.0;
            for k in 0..kernel_px {
                let s = k as f64 - half;
                acc += image.sample_bilinear(x as f64 + s * step.x, y as f64 + s * step.y);
            }
            out.set(y, x, acc * inv_k);
        }
    }
    out
}

/// Mean of valid ground-truth flow vectors; used for automatic blur
/// direction.  Falls back to horizontal when no flow is available.
pub fn mean_flow_direction(flow: Option<&FlowField>) -> Vec2 {
    let Some(flow) = flow else {
        return Vec2::new(1.0, 0.0);
    };
    let mut sum = Vec2::zeros();
    let mut n = 0usize;
    for i in 0..flow.height() {
        for j in 0..flow.width() {
            if flow.is_valid(i, j) {
                sum += flow.offset(i, j);
                n += 1;
            }
        }
    }
    if n == 0 || sum.norm() < 1e-9 {
        Vec2::new(1.0, 0.0)
    } else {
        sum / n as f64
    }
}

/// Applies configured degradations to a rendered frame in place.
pub fn blur_frame(bundle: &mut FrameBundle, kernel_px: usize, direction: Vec2) {
    bundle.image = apply_motion_blur(&bundle.image, kernel_px, direction);
    bundle.tags.push(DegradationTag::Blurred);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::sim::scene::TexturedQuad;
    use approx::assert_abs_diff_eq;

    fn wide_plane_scene(z: f64) -> SceneModel {
        SceneModel {
            statics: vec![TexturedQuad {
                origin: Vec3::new(-10.0, -10.0, z),
                edge_u: Vec3::new(20.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 20.0, 0.0),
                texture_seed: 3,
                texture_scale: 0.2,
            }],
            dynamics: vec![],
        }
    }

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn identical_poses_give_zero_flow() {
        let scene = wide_plane_scene(2.0);
        let pose = Pose::identity();
        let frame = render_frame(&scene, &pose, Some((&pose, 0.0)), &k500(), 1.0, 10).unwrap();
        let flow = frame.gt_flow.unwrap();
        assert!(flow.count_valid() > 0);
        for i in 0..flow.height() {
            for j in 0..flow.width() {
                if flow.is_valid(i, j) {
                    assert_abs_diff_eq!(flow.offset(i, j).norm(), 0.0, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn lateral_translation_flow_matches_projection_oracle() {
        // Camera center moves +0.01 m in x between frames; plane at z = 2,
        // fx = 500, so every plane pixel moves by −0.01·500/2 = −2.5 px.
        let scene = wide_plane_scene(2.0);
        let prev_pose = Pose::identity();
        let cur_pose = Pose::new(
            *Pose::identity().rotation(),
            Vec3::new(-0.01, 0.0, 0.0), // t = −R·c with c = (0.01, 0, 0)
        );
        let frame =
            render_frame(&scene, &cur_pose, Some((&prev_pose, 0.0)), &k500(), 1.0, 10).unwrap();
        let flow = frame.gt_flow.unwrap();
        assert!(flow.count_valid() > 50);
        for i in 0..flow.height() {
            for j in 0..flow.width() {
                if !flow.is_valid(i, j) {
                    continue;
                }
                let o = flow.offset(i, j);
                assert_abs_diff_eq!(o.x, -2.5, epsilon = 1e-9);
                assert_abs_diff_eq!(o.y, 0.0, epsilon = 1e-9);
                // Independent per-cell oracle: re-project the ground-truth
                // point into the previous pose.
                let p = Vec2::new((j as f64 + 0.5) * 10.0, (i as f64 + 0.5) * 10.0);
                let (q, _) = project(frame.gt_coords.coord(i, j), &prev_pose, &k500()).unwrap();
                assert_abs_diff_eq!(o.x, p.x - q.x, epsilon = 1e-12);
                assert_abs_diff_eq!(o.y, p.y - q.y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ground_truth_reprojects_onto_cell_centers() {
        let scene = SceneModel::desk_scene(11);
        let pose = Pose::look_at(
            Vec3::new(0.3, -0.1, 0.0),
            Vec3::new(0.0, 0.1, 6.0),
            Vec3::new(0.0, -1.0, 0.0),
        );
        let k = CameraIntrinsics::new(200.0, 200.0, 96.0, 72.0, 192, 144).unwrap();
        let frame = render_frame(&scene, &pose, None, &k, 0.0, 8).unwrap();
        assert!(frame.gt_coords.count_valid() > 100);
        for (i, j, coord, _) in frame.gt_coords.iter_valid() {
            let (px, _) = project(coord, &pose, &k).unwrap();
            let cx = (j as f64 + 0.5) * 8.0;
            let cy = (i as f64 + 0.5) * 8.0;
            assert!(
                (px.x - cx).abs() < 0.51 && (px.y - cy).abs() < 0.51,
                "cell ({i},{j}) reprojects to ({}, {}), expected ({cx}, {cy})",
                px.x,
                px.y
            );
        }
    }

    #[test]
    fn occluders_invalidate_flow_but_not_coords() {
        let mut scene = wide_plane_scene(2.0);
        // A dynamic quad sweeping in from the left covers part of the view
        // at t = 1 that was clear at t = 0.
        scene.dynamics.push(crate::sim::scene::DynamicObject {
            quad: TexturedQuad {
                origin: Vec3::new(-0.35, -0.12, 1.0),
                edge_u: Vec3::new(0.24, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 0.24, 0.0),
                texture_seed: 8,
                texture_scale: 0.04,
            },
            velocity: Vec3::new(0.12, 0.0, 0.0),
        });
        let pose = Pose::identity();
        let frame = render_frame(&scene, &pose, Some((&pose, 0.0)), &k500(), 1.0, 10).unwrap();
        let flow = frame.gt_flow.unwrap();
        let invalid_with_coords = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|&(i, j)| frame.gt_coords.is_valid(i, j) && !flow.is_valid(i, j))
            .count();
        assert!(
            invalid_with_coords > 0,
            "occluder should invalidate some flow cells"
        );
        assert_eq!(frame.gt_coords.count_valid(), 100);
    }

    #[test]
    fn blur_with_single_tap_is_identity() {
        let scene = wide_plane_scene(2.0);
        let frame = render_frame(&scene, &Pose::identity(), None, &k500(), 0.0, 10).unwrap();
        let blurred = apply_motion_blur(&frame.image, 1, Vec2::new(1.0, 0.0));
        assert_eq!(blurred, frame.image);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = GrayImage::from_data(8, 8, vec![0.42; 64]).unwrap();
        let blurred = apply_motion_blur(&img, 5, Vec2::new(1.0, 0.4));
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(blurred.get(i, j), 0.42, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let scene = SceneModel::desk_scene(5);
        let k = CameraIntrinsics::new(200.0, 200.0, 96.0, 72.0, 192, 144).unwrap();
        let pose = Pose::look_at(
            Vec3::new(0.0, -0.05, 0.0),
            Vec3::new(0.0, 0.1, 6.0),
            Vec3::new(0.0, -1.0, 0.0),
        );
        let frame = render_frame(&scene, &pose, None, &k, 0.0, 8).unwrap();
        let blurred = apply_motion_blur(&frame.image, 9, Vec2::new(1.0, 0.0));
        let mean_region = |img: &GrayImage| {
            let mut s = 0.0;
            let mut n = 0;
            for i in 10..img.height() - 10 {
                for j in 10..img.width() - 10 {
                    s += img.get(i, j);
                    n += 1;
                }
            }
            s / n as f64
        };
        // A horizontal mean over symmetric taps keeps the local average;
        // the interior mean may shift only through what leaks across the
        // region boundary.
        assert_abs_diff_eq!(mean_region(&blurred), mean_region(&frame.image), epsilon = 1e-3);
        // On a linear ramp, symmetric taps reproduce the center exactly.
        let mut ramp = GrayImage::new(6, 32);
        for i in 0..6 {
            for j in 0..32 {
                ramp.set(i, j, j as f64 / 31.0);
            }
        }
        let b = apply_motion_blur(&ramp, 5, Vec2::new(1.0, 0.0));
        for j in 4..28 {
            assert_abs_diff_eq!(b.get(3, j), ramp.get(3, j), epsilon = 1e-12);
        }
    }
}
