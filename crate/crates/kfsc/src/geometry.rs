//! Rigid transforms and the pinhole camera model.
//!
//! A [`Pose`] maps world points into the camera frame: `x_cam = R x_world + t`.
//! Rotations are stored as unit quaternions and renormalized after every
//! composition so long products cannot drift off the unit sphere.

use std::error::Error;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// Projection of a point at or behind the camera plane (depth given).
    BehindCamera(f64),
    /// Focal lengths and image dimensions must be positive and finite.
    InvalidIntrinsics(String),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::BehindCamera(z) => {
                write!(f, "cannot project point with camera depth {z}")
            }
            GeometryError::InvalidIntrinsics(msg) => write!(f, "invalid intrinsics: {msg}"),
        }
    }
}

impl Error for GeometryError {}

/// World-to-camera rigid transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Pose {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from raw quaternion coefficients `(w, x, y, z)` and a
    /// translation; the quaternion is normalized on entry.
    pub fn from_quaternion_coeffs(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Self {
        let q = Quaternion::new(w, x, y, z);
        Pose {
            rotation: UnitQuaternion::new_normalize(q),
            translation,
        }
    }

    /// Camera placed at `eye`, optical axis (+z) towards `target`, image up
    /// aligned with `-up` (image y grows downward).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows of R are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let translation = -(rotation * eye);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// Applies the transform: `R p + t`.
    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = UnitQuaternion::new_normalize(
            (self.rotation * other.rotation).into_inner(),
        );
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Rotation angle (radians) separating two poses; exactly zero for
    /// identical orientations.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        if self.rotation == other.rotation {
            return 0.0;
        }
        (self.rotation * other.rotation.inverse()).angle()
    }

    /// Left-composes a small rotation `exp(ω)` and adds a translation step;
    /// used by the pose refiner's local parameterization.
    pub fn perturbed(&self, omega: Vec3, delta_t: Vec3) -> Pose {
        let dq = UnitQuaternion::from_scaled_axis(omega);
        let rotation = UnitQuaternion::new_normalize((dq * self.rotation).into_inner());
        Pose {
            rotation,
            translation: self.translation + delta_t,
        }
    }

    /// Quaternion coefficients in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

/// Pinhole intrinsics with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point must be finite, got cx={cx} cy={cy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point; returns the pixel and its depth.
    pub fn project_camera(&self, p_cam: Vec3) -> Result<(Vec2, f64), GeometryError> {
        if p_cam.z <= 1e-9 {
            return Err(GeometryError::BehindCamera(p_cam.z));
        }
        let u = self.fx * p_cam.x / p_cam.z + self.cx;
        let v = self.fy * p_cam.y / p_cam.z + self.cy;
        Ok((Vec2::new(u, v), p_cam.z))
    }

    /// Camera-frame ray direction through a pixel (unnormalized, z = 1).
    pub fn ray_direction(&self, pixel: Vec2) -> Vec3 {
        Vec3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn contains(&self, pixel: Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// World point into the camera frame under a world-to-camera pose.
pub fn transform_to_camera(point: Vec3, pose: &Pose) -> Vec3 {
    pose.transform(point)
}

/// Projects a world point through a pose; returns the pixel and its depth.
pub fn project(
    point: Vec3,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<(Vec2, f64), GeometryError> {
    intrinsics.project_camera(pose.transform(point))
}
