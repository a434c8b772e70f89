//! Rigid poses, the pinhole camera, and ray generation.
//!
//! Poses are camera-to-world. Depth is always the camera-frame z coordinate,
//! never the arclength along a ray; [`Ray::scale`] converts between the two.

use std::ops::Mul;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Camera-to-world rigid transform stored as a unit quaternion and a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub q: UnitQuaternion<f64>,
    pub t: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { q, t }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            q: UnitQuaternion::identity(),
            t,
        }
    }

    /// Layout `(qw, qx, qy, qz, tx, ty, tz)`.
    pub fn to_vec7(&self) -> [f64; 7] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k, self.t.x, self.t.y, self.t.z]
    }

    /// Inverse of [`Pose::to_vec7`]; the quaternion part need not be unit length.
    pub fn from_vec7(v: &[f64]) -> Result<Self> {
        assert!(v.len() >= 7, "pose vector needs 7 entries");
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let norm = q.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        Ok(Self {
            q: UnitQuaternion::new_unchecked(q / norm),
            t: Vector3::new(v[4], v[5], v[6]),
        })
    }

    /// `self ∘ other`: applying the result equals applying `other` then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            q: renormalize(self.q * other.q),
            t: self.q * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.inverse();
        Pose {
            q: qi,
            t: -(qi * self.t),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q * p + self.t
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse() * (p - self.t)
    }

    /// Translation distance and rotation angle (radians) between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        ((self.t - other.t).norm(), self.q.angle_to(&other.q))
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Initial guess `prev ∘ prev2⁻¹ ∘ prev` under a constant-velocity motion model.
pub fn constant_speed_predict(prev: &Pose, prev2: &Pose) -> Pose {
    prev.compose(&prev2.inverse()).compose(prev)
}

/// Gradient of `wᵀ R(q/|q|) a` with respect to the raw quaternion `(qw, qx, qy, qz)`.
///
/// The normalization Jacobian is included, so the result is tangent to the
/// sphere at `q` and can be fed straight to an optimizer on the 7-vector.
pub fn rotation_vjp(q_raw: [f64; 4], a: &Vector3<f64>, w: &Vector3<f64>) -> [f64; 4] {
    let norm = (q_raw[0] * q_raw[0] + q_raw[1] * q_raw[1] + q_raw[2] * q_raw[2] + q_raw[3] * q_raw[3])
        .sqrt();
    let qw = q_raw[0] / norm;
    let v = Vector3::new(q_raw[1], q_raw[2], q_raw[3]) / norm;
    // R a = a + 2 qw (v × a) + 2 v × (v × a), valid on the unit sphere.
    let g_w = 2.0 * w.dot(&v.cross(a));
    let g_v = 2.0 * qw * a.cross(w) + 2.0 * (v.dot(a) * w + v.dot(w) * a - 2.0 * w.dot(a) * v);
    let g_hat = [g_w, g_v.x, g_v.y, g_v.z];
    let q_hat = [qw, v.x, v.y, v.z];
    let radial: f64 = g_hat.iter().zip(&q_hat).map(|(g, q)| g * q).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (g_hat[i] - q_hat[i] * radial) / norm;
    }
    out
}

/// Pinhole intrinsics plus image size and the integer depth encoding scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Integer depth units per meter.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, depth_scale: f64) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// 64x48 desk camera with roughly 77° horizontal field of view.
    pub fn desk() -> Self {
        Self {
            fx: 40.0,
            fy: 40.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
            depth_scale: 5000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics("principal point outside image".into()));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::InvalidIntrinsics("depth scale must be positive".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Camera-frame direction with unit z component.
    pub fn camera_dir(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Project a camera-frame point; `None` when it lies behind the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Project a world point through a camera-to-world pose into `(u, v, z)`.
    pub fn project(&self, pose: &Pose, p_world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let pc = pose.inverse_transform_point(p_world);
        self.project_camera(&pc).map(|(u, v)| (u, v, pc.z))
    }

    /// Back-project pixel `(u, v)` at z-depth `depth` into world coordinates.
    pub fn back_project(&self, pose: &Pose, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        pose.transform_point(&(self.camera_dir(u, v) * depth))
    }
}

/// A camera ray in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
    /// Arclength per unit of camera z-depth.
    pub scale: f64,
    pub pixel: (f64, f64),
    pub gt_color: [f64; 3],
    /// Meters of camera z-depth, 0 when invalid.
    pub gt_depth: f64,
}

impl Ray {
    pub fn point_at_depth(&self, z: f64) -> Vector3<f64> {
        self.origin + self.dir * (z * self.scale)
    }
}

pub fn pixel_to_ray(intr: &CameraIntrinsics, pose: &Pose, u: f64, v: f64, depth: f64, color: [f64; 3]) -> Result<Ray> {
    if !intr.in_bounds(u, v) {
        return Err(Error::PixelOutOfBounds {
            u,
            v,
            width: intr.width,
            height: intr.height,
        });
    }
    let d_cam = intr.camera_dir(u, v);
    let scale = d_cam.norm();
    Ok(Ray {
        origin: pose.t,
        dir: pose.q * (d_cam / scale),
        scale,
        pixel: (u, v),
        gt_color: color,
        gt_depth: depth,
    })
}

/// Camera-to-world pose looking from `eye` towards `target`, world `up` hint.
///
/// Camera axes follow the usual convention: x right, y down, z forward.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]));
    Pose::new(UnitQuaternion::from_rotation_matrix(&rot), *eye)
}
