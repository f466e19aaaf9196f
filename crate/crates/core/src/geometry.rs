//! Pinhole camera model, rigid transforms and pose distances.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame: x right, y down, z forward (optical axis);
//! * pixel origin at the top-left corner, pixel centers at integer coordinates;
//! * poses are camera-to-world: `world = R * camera + t`;
//! * depth is z-depth along the optical axis, in meters.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-entry tolerance for the orthonormality / determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Default rotation/translation coupling for [`se3_geodesic`], in meters.
pub const DEFAULT_RHO: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant +1 (max deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid depth {0}: depth must be positive and finite")]
    InvalidDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("pose matrix bottom row must be [0, 0, 0, 1]")]
    NotRigid,
}

/// Pinhole intrinsics `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center and square pixels.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            (f64::from(width) - 1.0) / 2.0,
            (f64::from(height) - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image size must be positive ({}x{})",
                self.width, self.height
            )));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx)
            || !(0.0..f64::from(self.height)).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// True when `p` lies inside the pixel-center extent `[0, W-1] x [0, H-1]`.
    pub fn contains(&self, p: PixelCoord) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= f64::from(self.width - 1) && p.v <= f64::from(self.height - 1)
    }
}

/// Real-valued pixel coordinate; `u` runs along the width, `v` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let deviation = rotation_deviation(r);
    if deviation > ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidRotation { deviation });
    }
    Ok(())
}

fn check_translation(t: &Vector3<f64>) -> Result<(), GeometryError> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite("translation"))
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        check_translation(&translation)?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Pose from an axis-angle rotation. The axis need not be normalized.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
        Self { rotation, translation }
    }

    /// Parses a row-major 4x4 homogeneous matrix. The last row must be `[0, 0, 0, 1]`.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose matrix"));
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::NotRigid);
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Maps a camera-frame point into the world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world-frame point into this camera's frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Maps source-camera-frame points into the target camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RelativeTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        check_translation(&translation)?;
        Ok(Self { rotation, translation })
    }

    /// Builds a transform without validating the rotation. Callers guarantee orthonormality
    /// (e.g. SVD-derived rotations).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `next ∘ self`: apply `self`, then `next`.
    pub fn then(&self, next: &RelativeTransform) -> RelativeTransform {
        RelativeTransform {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }

    pub fn inverse(&self) -> RelativeTransform {
        let rt = self.rotation.transpose();
        RelativeTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle of the transform, radians.
    pub fn angle(&self) -> f64 {
        so3_log_angle(&self.rotation)
    }

    /// Re-expresses a camera-to-world pose after applying this transform in world space.
    pub fn apply_to_pose(&self, pose: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * pose.rotation,
            translation: self.rotation * pose.translation + self.translation,
        }
    }
}

/// Back-projects pixel `p` with z-depth `depth` into the camera frame: `d * K^-1 [u, v, 1]^T`.
pub fn unproject(p: PixelCoord, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !(p.u.is_finite() && p.v.is_finite()) {
        return Err(GeometryError::NonFinite("pixel coordinate"));
    }
    Ok(Vector3::new(depth * (p.u - k.cx) / k.fx, depth * (p.v - k.cy) / k.fy, depth))
}

/// Projects a camera-frame point; returns the pixel and its z-depth.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<(PixelCoord, f64), GeometryError> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("point"));
    }
    if point.z <= 0.0 {
        return Err(GeometryError::BehindCamera(point.z));
    }
    let u = k.fx * point.x / point.z + k.cx;
    let v = k.fy * point.y / point.z + k.cy;
    Ok((PixelCoord { u, v }, point.z))
}

/// Transform taking `src`-camera coordinates to `dst`-camera coordinates.
pub fn relative_transform(src: &PoseSE3, dst: &PoseSE3) -> RelativeTransform {
    let rdt = dst.rotation.transpose();
    RelativeTransform {
        rotation: rdt * src.rotation,
        translation: rdt * (src.translation - dst.translation),
    }
}

/// Rotation angle of `r` in `[0, pi]`.
pub fn so3_log_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// SE(3) geodesic distance `sqrt(theta^2 + |t_b - t_a|^2 / rho^2)`.
pub fn se3_geodesic(a: &PoseSE3, b: &PoseSE3, rho: f64) -> f64 {
    let theta = so3_log_angle(&(a.rotation.transpose() * b.rotation));
    let dt = (b.translation - a.translation).norm() / rho;
    (theta * theta + dt * dt).sqrt()
}
