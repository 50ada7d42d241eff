//! 4-DoF pose algebra: yaw about gravity plus a 3D translation.
//!
//! A [`Pose4`] is the pose of a child frame expressed in a parent frame and acts
//! on points as `x_parent = rz(yaw) * x_child + trans`. Roll and pitch are never
//! represented; rotation matrices are built on demand from the scalar yaw.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// 3x3 rotation matrix type produced by [`rz`].
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite angle: {0}")]
    NonFiniteAngle(f64),
    #[error("non-finite translation component")]
    NonFiniteTranslation,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_yaw(theta: f64) -> Result<f64, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::NonFiniteAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Unchecked variant of [`wrap_yaw`] for hot paths. Non-finite input yields NaN.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Rotation about +z by `theta`.
pub fn rz(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[inline]
fn rotate_z(s: f64, c: f64, v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Yaw-plus-translation rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose4 {
    yaw: f64,
    /// Translation in meters.
    pub trans: Vector3<f64>,
}

impl Default for Pose4 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose4 {
    pub const fn identity() -> Self {
        Self {
            yaw: 0.0,
            trans: Vector3::new(0.0, 0.0, 0.0),
        }
    }

    /// Builds a pose, wrapping the yaw. Non-finite inputs propagate as NaN; use
    /// [`Pose4::try_new`] at API boundaries.
    pub fn new(yaw: f64, trans: Vector3<f64>) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            trans,
        }
    }

    pub fn try_new(yaw: f64, trans: Vector3<f64>) -> Result<Self, GeometryError> {
        let yaw = wrap_yaw(yaw)?;
        if !trans.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Ok(Self { yaw, trans })
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(yaw, Vector3::new(x, y, z))
    }

    #[inline]
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn set_yaw(&mut self, yaw: f64) {
        self.yaw = wrap_angle(yaw);
    }

    pub fn rotation(&self) -> Mat3 {
        rz(self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.trans.iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`: `other` is expressed in `self`'s child frame.
    #[inline]
    pub fn compose(&self, other: &Pose4) -> Pose4 {
        let (s, c) = self.yaw.sin_cos();
        Pose4 {
            yaw: wrap_angle(self.yaw + other.yaw),
            trans: self.trans + rotate_z(s, c, &other.trans),
        }
    }

    #[inline]
    pub fn inverse(&self) -> Pose4 {
        let (s, c) = (-self.yaw).sin_cos();
        Pose4 {
            yaw: wrap_angle(-self.yaw),
            trans: -rotate_z(s, c, &self.trans),
        }
    }

    /// Pose of `other`'s frame expressed in `self`'s frame.
    #[inline]
    pub fn relative(&self, other: &Pose4) -> Pose4 {
        let (s, c) = (-self.yaw).sin_cos();
        Pose4 {
            yaw: wrap_angle(other.yaw - self.yaw),
            trans: rotate_z(s, c, &(other.trans - self.trans)),
        }
    }

    /// Applies the transform to a point in the child frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        self.trans + rotate_z(s, c, p)
    }

    /// Largest absolute component difference, with the yaw difference wrapped.
    pub fn max_abs_diff(&self, other: &Pose4) -> f64 {
        let dy = wrap_angle(self.yaw - other.yaw).abs();
        (self.trans - other.trans).amax().max(dy)
    }
}

pub fn compose(a: &Pose4, b: &Pose4) -> Pose4 {
    a.compose(b)
}

pub fn inverse(a: &Pose4) -> Pose4 {
    a.inverse()
}

pub fn relative(a: &Pose4, b: &Pose4) -> Pose4 {
    a.relative(b)
}
