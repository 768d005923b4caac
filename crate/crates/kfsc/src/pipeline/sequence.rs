//! Persisting rendered sequences: a JSON manifest plus one PGM image, one
//! coordinate map, and (from the second frame on) one flow field per frame.
//!
//! Layout under the sequence directory:
//!
//! ```text
//! manifest.json
//! images/frame_0000.pgm
//! gt/frame_0000.kfsc
//! flow/frame_0001.kffl      (frame 0 has no incoming flow)
//! ```

use std::fs;
use std::path::Path;

use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::io::{
    read_coord_map, read_flow, read_manifest, read_pgm, write_coord_map, write_flow,
    write_manifest, write_pgm, ManifestFrame, ManifestIntrinsics, SequenceManifest,
};
use crate::sim::{DegradationTag, FrameBundle};

use super::PipelineError;

/// A sequence read back from disk, together with the camera it was rendered
/// with and the label-grid stride of its ground-truth maps.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub frames: Vec<FrameBundle>,
    pub intrinsics: CameraIntrinsics,
    pub stride: usize,
}

fn pose_to_array(pose: &Pose) -> [f64; 7] {
    let q = pose.quaternion_wxyz();
    let t = pose.translation();
    [q[0], q[1], q[2], q[3], t.x, t.y, t.z]
}

fn pose_from_array(a: &[f64; 7]) -> Pose {
    Pose::from_quaternion_coeffs(a[0], a[1], a[2], a[3], Vec3::new(a[4], a[5], a[6]))
}

fn tag_to_string(tag: &DegradationTag) -> String {
    tag.to_string()
}

fn tag_from_string(s: &str) -> Result<DegradationTag, PipelineError> {
    match s {
        "blurred" => Ok(DegradationTag::Blurred),
        "trimmed_restart" => Ok(DegradationTag::TrimmedRestart),
        other => Err(PipelineError::InvalidConfig(format!(
            "unknown degradation tag '{other}' in manifest"
        ))),
    }
}

/// Writes `frames` under `dir`, creating the directory structure and the
/// manifest. Paths inside the manifest are relative to `dir`, so the sequence
/// directory can be moved wholesale.
pub fn save_sequence(
    frames: &[FrameBundle],
    intrinsics: &CameraIntrinsics,
    stride: usize,
    dir: &Path,
) -> Result<(), PipelineError> {
    if frames.is_empty() {
        return Err(PipelineError::InvalidConfig(
            "cannot save an empty sequence".to_string(),
        ));
    }
    let io_err = |e: std::io::Error| {
        PipelineError::InvalidConfig(format!("cannot create sequence directories: {e}"))
    };
    fs::create_dir_all(dir.join("images")).map_err(io_err)?;
    fs::create_dir_all(dir.join("gt")).map_err(io_err)?;
    fs::create_dir_all(dir.join("flow")).map_err(io_err)?;

    let mut manifest_frames = Vec::with_capacity(frames.len());
    for frame in frames {
        let image_rel = format!("images/frame_{:04}.pgm", frame.index);
        let coords_rel = format!("gt/frame_{:04}.kfsc", frame.index);
        write_pgm(&frame.image, &dir.join(&image_rel))?;
        write_coord_map(&frame.gt_coords, &dir.join(&coords_rel))?;
        let flow_rel = match &frame.gt_flow {
            Some(flow) => {
                let rel = format!("flow/frame_{:04}.kffl", frame.index);
                write_flow(flow, &dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        manifest_frames.push(ManifestFrame {
            index: frame.index,
            source_index: frame.source_index,
            timestamp: frame.timestamp,
            image: image_rel,
            coords: coords_rel,
            flow: flow_rel,
            pose: pose_to_array(&frame.gt_pose),
            tags: frame.tags.iter().map(tag_to_string).collect(),
        });
    }

    let manifest = SequenceManifest {
        intrinsics: ManifestIntrinsics {
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width,
            height: intrinsics.height,
        },
        stride,
        frames: manifest_frames,
    };
    write_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(())
}

/// Reads a sequence previously written by [`save_sequence`].
pub fn load_sequence(dir: &Path) -> Result<LoadedSequence, PipelineError> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let intrinsics = CameraIntrinsics {
        fx: manifest.intrinsics.fx,
        fy: manifest.intrinsics.fy,
        cx: manifest.intrinsics.cx,
        cy: manifest.intrinsics.cy,
        width: manifest.intrinsics.width,
        height: manifest.intrinsics.height,
    };
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let image = read_pgm(&dir.join(&entry.image))?;
        let gt_coords = read_coord_map(&dir.join(&entry.coords))?;
        let gt_flow = match &entry.flow {
            Some(rel) => Some(read_flow(&dir.join(rel))?),
            None => None,
        };
        let tags = entry
            .tags
            .iter()
            .map(|s| tag_from_string(s))
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(FrameBundle {
            index: entry.index,
            source_index: entry.source_index,
            timestamp: entry.timestamp,
            image,
            gt_coords,
            gt_flow,
            gt_pose: pose_from_array(&entry.pose),
            tags,
        });
    }
    Ok(LoadedSequence {
        frames,
        intrinsics,
        stride: manifest.stride,
    })
}
