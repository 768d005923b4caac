//! Scene description and ray casting.
//!
//! Scenes are built from textured planar quads.  Static quads form the
//! environment; dynamic quads translate over time and create occlusions and
//! moving structure.  Surface intensity comes from multi-octave value noise
//! keyed by a per-quad seed, so every rendering is fully deterministic.

use crate::geometry::Vec3;

/// Hash-based lattice noise value in `[0, 1)`.
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut x = seed
        ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothed bilinear value noise at a continuous lattice position.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let ix = x.floor();
    let iy = y.floor();
    let fx = smoothstep(x - ix);
    let fy = smoothstep(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(seed, ix, iy);
    let v01 = lattice(seed, ix + 1, iy);
    let v10 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bottom = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Three octaves of value noise normalized into `[0, 1]`.
pub fn fbm(seed: u64, x: f64, y: f64) -> f64 {
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    for octave in 0..3u64 {
        total += amp * value_noise(seed.wrapping_add(octave), x * (1 << octave) as f64, y * (1 << octave) as f64);
        norm += amp;
        amp *= 0.5;
    }
    total / norm
}

/// One textured planar rectangle: `origin + a·edge_u + b·edge_v`,
/// `a, b ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct TexturedQuad {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub texture_seed: u64,
    /// World-space size (meters) of one noise lattice cell.
    pub texture_scale: f64,
}

impl TexturedQuad {
    /// Surface intensity at local coordinates `(a, b)`.
    pub fn intensity(&self, a: f64, b: f64) -> f64 {
        let u = a * self.edge_u.norm() / self.texture_scale;
        let v = b * self.edge_v.norm() / self.texture_scale;
        fbm(self.texture_seed, u, v)
    }

    pub fn translated(&self, offset: Vec3) -> TexturedQuad {
        TexturedQuad {
            origin: self.origin + offset,
            ..self.clone()
        }
    }
}

/// A quad translating linearly with time.
#[derive(Debug, Clone)]
pub struct DynamicObject {
    pub quad: TexturedQuad,
    /// Translation velocity in meters per time unit.
    pub velocity: Vec3,
}

impl DynamicObject {
    pub fn quad_at(&self, time: f64) -> TexturedQuad {
        self.quad.translated(self.velocity * time)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SceneModel {
    pub statics: Vec<TexturedQuad>,
    pub dynamics: Vec<DynamicObject>,
}

/// Result of casting one ray into the scene.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    /// World-space intersection point.
    pub point: Vec3,
    /// Ray parameter (distance when the direction is unit length).
    pub t: f64,
    pub intensity: f64,
    /// Whether the surface belongs to a dynamic object.
    pub dynamic: bool,
}

/// Ray / quad intersection; returns `(t, a, b)` local hit coordinates.
fn ray_quad(origin: Vec3, dir: Vec3, quad: &TexturedQuad) -> Option<(f64, f64, f64)> {
    let normal = quad.edge_u.cross(&quad.edge_v);
    let denom = normal.dot(&dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = normal.dot(&(quad.origin - origin)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let p = origin + dir * t;
    let d = p - quad.origin;
    // Solve d = a·eu + b·ev in the (generally non-orthogonal) edge basis.
    let uu = quad.edge_u.norm_squared();
    let vv = quad.edge_v.norm_squared();
    let uv = quad.edge_u.dot(&quad.edge_v);
    let du = d.dot(&quad.edge_u);
    let dv = d.dot(&quad.edge_v);
    let det = uu * vv - uv * uv;
    if det.abs() < 1e-15 {
        return None;
    }
    let a = (du * vv - dv * uv) / det;
    let b = (dv * uu - du * uv) / det;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return None;
    }
    Some((t, a, b))
}

impl SceneModel {
    /// Casts a ray at a given scene time; returns the nearest hit.
    pub fn raycast(&self, origin: Vec3, dir: Vec3, time: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |quad: &TexturedQuad, dynamic: bool| {
            if let Some((t, a, b)) = ray_quad(origin, dir, quad) {
                if best.map_or(true, |h| t < h.t) {
                    best = Some(Hit {
                        point: origin + dir * t,
                        t,
                        intensity: quad.intensity(a, b),
                        dynamic,
                    });
                }
            }
        };
        for quad in &self.statics {
            consider(quad, false);
        }
        for obj in &self.dynamics {
            let quad = obj.quad_at(time);
            consider(&quad, true);
        }
        best
    }

    /// Desk-scale environment used by the default configurations: a back
    /// wall, floor, a tilted desk slab and two side panels covering depths
    /// from roughly 1.8 m to 3.4 m.  The world frame matches the camera at
    /// identity: +z forward, +y down, +x right.
    pub fn desk_scene(seed: u64) -> SceneModel {
        let statics = vec![
            // Back wall.
            TexturedQuad {
                origin: Vec3::new(-2.4, -1.7, 3.4),
                edge_u: Vec3::new(4.8, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 3.4, 0.0),
                texture_seed: seed.wrapping_add(1),
                texture_scale: 0.16,
            },
            // Floor (y grows downward, so the floor sits at positive y).
            TexturedQuad {
                origin: Vec3::new(-2.6, 1.25, 0.8),
                edge_u: Vec3::new(5.2, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 0.1, 2.7),
                texture_seed: seed.wrapping_add(2),
                texture_scale: 0.2,
            },
            // Desk slab, tilted towards the camera.
            TexturedQuad {
                origin: Vec3::new(-0.9, 0.75, 2.0),
                edge_u: Vec3::new(1.8, 0.0, 0.0),
                edge_v: Vec3::new(0.0, -0.45, 0.55),
                texture_seed: seed.wrapping_add(3),
                texture_scale: 0.1,
            },
            // Left panel, angled inward.
            TexturedQuad {
                origin: Vec3::new(-2.1, -1.5, 1.8),
                edge_u: Vec3::new(0.55, 0.0, 1.3),
                edge_v: Vec3::new(0.0, 2.9, 0.0),
                texture_seed: seed.wrapping_add(4),
                texture_scale: 0.14,
            },
            // Right panel, angled inward.
            TexturedQuad {
                origin: Vec3::new(1.6, -1.5, 3.0),
                edge_u: Vec3::new(0.6, 0.0, -1.2),
                edge_v: Vec3::new(0.0, 2.9, 0.0),
                texture_seed: seed.wrapping_add(5),
                texture_scale: 0.14,
            },
        ];
        SceneModel {
            statics,
            dynamics: Vec::new(),
        }
    }

    /// Appends `count` dynamic occluder quads placed deterministically from
    /// `seed`: small panels between camera and scene drifting sideways.
    pub fn with_occluders(mut self, count: usize, seed: u64) -> SceneModel {
        for k in 0..count {
            let r = |salt: u64| lattice(seed.wrapping_add(salt), k as i64, 0);
            let size = 0.22 + 0.14 * r(11);
            let x0 = -0.7 + 1.4 * r(12);
            let y0 = -0.35 + 0.6 * r(13);
            let z0 = 1.25 + 0.4 * r(14);
            let speed = 0.015 + 0.02 * r(15);
            let dir = if r(16) < 0.5 { 1.0 } else { -1.0 };
            self.dynamics.push(DynamicObject {
                quad: TexturedQuad {
                    origin: Vec3::new(x0 - 0.5 * size, y0 - 0.5 * size, z0),
                    edge_u: Vec3::new(size, 0.0, 0.05),
                    edge_v: Vec3::new(0.0, size, 0.0),
                    texture_seed: seed.wrapping_add(100 + k as u64),
                    texture_scale: 0.05,
                },
                velocity: Vec3::new(dir * speed, 0.004 * (r(17) - 0.5), 0.0),
            });
        }
        self
    }
}
