//! File formats: binary map containers, PGM/PPM images, PLY clouds and
//! sequence manifests.
//!
//! Coordinate maps use a little-endian container: the 4-byte magic `KFSC`,
//! `u32` height, `u32` width, `height·width` rows of three `f32` coordinates
//! in row-major order, one `f32` log-variance plane, then one `u8` validity
//! plane.  Flow fields use the sibling magic `KFFL` with an extra `f32`
//! stride field in the header and two `f32` channels per cell.  Writing a
//! map and reading it back reproduces the file byte for byte: invalid cells
//! are always serialized with the canonical quiet-NaN coordinate and their
//! stored log-variance.

use std::error::Error;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Vec2, Vec3};
use crate::map::{CoordStateMap, FlowField, GrayImage};

const COORD_MAGIC: &[u8; 4] = b"KFSC";
const FLOW_MAGIC: &[u8; 4] = b"KFFL";

#[derive(Debug)]
pub enum IoError {
    Io(std::io::Error),
    /// Structural problem in a file being read (bad magic, truncation, ...).
    Format(String),
    Json(serde_json::Error),
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io(e) => write!(f, "i/o error: {e}"),
            IoError::Format(msg) => write!(f, "format error: {msg}"),
            IoError::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl Error for IoError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            IoError::Io(e) => Some(e),
            IoError::Format(_) => None,
            IoError::Json(e) => Some(e),
        }
    }
}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e)
    }
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Json(e)
    }
}

/// Canonical bit pattern used for every serialized NaN coordinate.
const CANONICAL_NAN_BITS: u32 = 0x7fc0_0000;

fn push_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_coord_f32(buf: &mut Vec<u8>, v: f64) {
    let q = v as f32;
    if q.is_nan() {
        buf.extend_from_slice(&CANONICAL_NAN_BITS.to_le_bytes());
    } else {
        push_f32(buf, q);
    }
}

/// Serializes a coordinate map to the `KFSC` byte layout.
pub fn coord_map_to_bytes(map: &CoordStateMap) -> Vec<u8> {
    let (h, w) = map.shape();
    let n = h * w;
    let mut buf = Vec::with_capacity(4 + 8 + n * (12 + 4 + 1));
    buf.extend_from_slice(COORD_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for c in map.coords_raw() {
        push_coord_f32(&mut buf, c.x);
        push_coord_f32(&mut buf, c.y);
        push_coord_f32(&mut buf, c.z);
    }
    for s in map.log_variance_raw() {
        push_f32(&mut buf, *s as f32);
    }
    for v in map.valid_raw() {
        buf.push(u8::from(*v));
    }
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.data.len() {
            return Err(IoError::Format(format!(
                "truncated file: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32, IoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_f32(&mut self) -> Result<f32, IoError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a coordinate map from the `KFSC` byte layout.
pub fn coord_map_from_bytes(data: &[u8]) -> Result<CoordStateMap, IoError> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.take(4)?;
    if magic != COORD_MAGIC {
        return Err(IoError::Format(format!(
            "bad magic {magic:?}, expected {COORD_MAGIC:?}"
        )));
    }
    let h = cur.read_u32()? as usize;
    let w = cur.read_u32()? as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| IoError::Format("dimension overflow".into()))?;
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let x = cur.read_f32()? as f64;
        let y = cur.read_f32()? as f64;
        let z = cur.read_f32()? as f64;
        coords.push(Vec3::new(x, y, z));
    }
    let mut log_variance = Vec::with_capacity(n);
    for _ in 0..n {
        log_variance.push(cur.read_f32()? as f64);
    }
    let valid_bytes = cur.take(n)?;
    if cur.pos != data.len() {
        return Err(IoError::Format(format!(
            "{} trailing bytes after map payload",
            data.len() - cur.pos
        )));
    }
    let valid: Vec<bool> = valid_bytes.iter().map(|b| *b != 0).collect();
    // Normalize invalid cells to the in-memory convention.
    let mut map = CoordStateMap::from_parts(h, w, coords, log_variance, valid.clone())
        .map_err(|e| IoError::Format(e.to_string()))?;
    for i in 0..h {
        for j in 0..w {
            if !valid[i * w + j] {
                map.set_invalid(i, j);
            }
        }
    }
    Ok(map)
}

pub fn write_coord_map(map: &CoordStateMap, path: &Path) -> Result<(), IoError> {
    fs::write(path, coord_map_to_bytes(map))?;
    Ok(())
}

pub fn read_coord_map(path: &Path) -> Result<CoordStateMap, IoError> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    coord_map_from_bytes(&data)
}

/// Serializes a flow field to the `KFFL` byte layout.
pub fn flow_to_bytes(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.shape();
    let n = h * w;
    let mut buf = Vec::with_capacity(4 + 12 + n * (8 + 1));
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    push_f32(&mut buf, flow.stride() as f32);
    for i in 0..h {
        for j in 0..w {
            let o = flow.offset(i, j);
            push_coord_f32(&mut buf, o.x);
            push_coord_f32(&mut buf, o.y);
        }
    }
    for i in 0..h {
        for j in 0..w {
            buf.push(u8::from(flow.is_valid(i, j)));
        }
    }
    buf
}

/// Parses a flow field from the `KFFL` byte layout.
pub fn flow_from_bytes(data: &[u8]) -> Result<FlowField, IoError> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.take(4)?;
    if magic != FLOW_MAGIC {
        return Err(IoError::Format(format!(
            "bad magic {magic:?}, expected {FLOW_MAGIC:?}"
        )));
    }
    let h = cur.read_u32()? as usize;
    let w = cur.read_u32()? as usize;
    let stride = cur.read_f32()? as f64;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| IoError::Format("dimension overflow".into()))?;
    let mut offsets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = cur.read_f32()? as f64;
        let y = cur.read_f32()? as f64;
        offsets.push(Vec2::new(x, y));
    }
    let valid_bytes = cur.take(n)?;
    if cur.pos != data.len() {
        return Err(IoError::Format(format!(
            "{} trailing bytes after flow payload",
            data.len() - cur.pos
        )));
    }
    let valid: Vec<bool> = valid_bytes.iter().map(|b| *b != 0).collect();
    let mut flow = FlowField::from_parts(h, w, stride, offsets, valid.clone())
        .map_err(|e| IoError::Format(e.to_string()))?;
    for i in 0..h {
        for j in 0..w {
            if !valid[i * w + j] {
                flow.set_invalid(i, j);
            }
        }
    }
    Ok(flow)
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<(), IoError> {
    fs::write(path, flow_to_bytes(flow))?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField, IoError> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    flow_from_bytes(&data)
}

/// Writes a grayscale image as binary PGM (P5, maxval 255).
pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
    for i in 0..image.height() {
        for j in 0..image.width() {
            let v = (image.get(i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
            out.write_all(&[v])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a binary PGM (P5) written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    // Header: "P5\n{w} {h}\n255\n" followed by raw bytes.
    let header_end = data
        .windows(4)
        .position(|w| w == b"255\n")
        .ok_or_else(|| IoError::Format("missing PGM maxval".into()))?
        + 4;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| IoError::Format("non-UTF8 PGM header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("P5") {
        return Err(IoError::Format("not a binary PGM (P5)".into()));
    }
    let w: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::Format("bad PGM width".into()))?;
    let h: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::Format("bad PGM height".into()))?;
    let body = &data[header_end..];
    if body.len() != w * h {
        return Err(IoError::Format(format!(
            "PGM payload has {} bytes, expected {}",
            body.len(),
            w * h
        )));
    }
    let values: Vec<f64> = body.iter().map(|b| f64::from(*b) / 255.0).collect();
    GrayImage::from_data(h, w, values).map_err(|e| IoError::Format(e.to_string()))
}

/// Writes a false-color flow visualization as binary PPM (P6).
///
/// Red and green encode the x/y displacement mapped into `[0, 255]` over
/// `±max_px`; invalid cells are black, zero flow is mid-gray.
pub fn write_flow_ppm(flow: &FlowField, max_px: f64, path: &Path) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", flow.width(), flow.height())?;
    let scale = if max_px > 0.0 { max_px } else { 1.0 };
    for i in 0..flow.height() {
        for j in 0..flow.width() {
            let px = if flow.is_valid(i, j) {
                let o = flow.offset(i, j);
                let r = ((o.x / scale).clamp(-1.0, 1.0) * 127.0 + 128.0) as u8;
                let g = ((o.y / scale).clamp(-1.0, 1.0) * 127.0 + 128.0) as u8;
                [r, g, 128]
            } else {
                [0, 0, 0]
            };
            out.write_all(&px)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes an ASCII PLY point cloud.
///
/// Each point carries a gray level derived from its variance rank: the most
/// confident point is white, the least confident black, so viewers show
/// filter convergence directly.
pub fn write_ply(points: &[(Vec3, f64)], path: &Path) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", points.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "property uchar red")?;
    writeln!(out, "property uchar green")?;
    writeln!(out, "property uchar blue")?;
    writeln!(out, "end_header")?;

    // Rank points by variance; ties keep input order (stable sort).
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|a, b| {
        points[*a]
            .1
            .partial_cmp(&points[*b].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut gray = vec![0u8; points.len()];
    let denom = points.len().saturating_sub(1).max(1) as f64;
    for (rank, idx) in order.iter().enumerate() {
        gray[*idx] = (255.0 * (1.0 - rank as f64 / denom)).round() as u8;
    }
    for ((p, _), g) in points.iter().zip(gray.iter()) {
        writeln!(
            out,
            "{} {} {} {g} {g} {g}",
            p.x as f32, p.y as f32, p.z as f32
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Camera intrinsics as stored in a sequence manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// One frame of a serialized sequence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestFrame {
    pub index: usize,
    /// Index on the untrimmed camera path; differs from `index` after a trim.
    #[serde(default)]
    pub source_index: usize,
    pub timestamp: f64,
    /// Relative path of the PGM image.
    pub image: String,
    /// Relative path of the KFSC ground-truth coordinate map.
    pub coords: String,
    /// Relative path of the KFFL ground-truth flow (absent for frame 0).
    pub flow: Option<String>,
    /// World-to-camera pose as `[qw, qx, qy, qz, tx, ty, tz]`.
    pub pose: [f64; 7],
    /// Degradation tags (`blurred`, `trimmed_restart`).
    pub tags: Vec<String>,
}

/// Top-level JSON manifest describing a rendered sequence on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceManifest {
    pub intrinsics: ManifestIntrinsics,
    /// Feature-grid stride: ground-truth maps have `height/stride` rows.
    pub stride: usize,
    pub frames: Vec<ManifestFrame>,
}

pub fn write_manifest(manifest: &SequenceManifest, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<SequenceManifest, IoError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
