//! Pinhole camera intrinsics and camera-to-world poses.
//!
//! Convention: the camera looks down its local −z axis, +x is right and +y is
//! up in camera space, while pixel rows grow downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Maximum tolerated |RᵀR − I| entry for a pose rotation.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Ray start distance.
    pub near: f64,
    /// Ray end distance.
    pub far: f64,
}

impl CameraModel {
    /// Square-pixel camera with the principal point at the image center.
    pub fn from_fov(width: u32, height: u32, fov_y_degrees: f64, near: f64, far: f64) -> Self {
        let half = fov_y_degrees.to_radians() * 0.5;
        let f = height as f64 * 0.5 / crate::math::tan(half);
        Self {
            fx: f,
            fy: f,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidCamera("require 0 < near < far"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera("image must be at least 8x8"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.far.is_finite()) {
            return Err(Error::InvalidCamera("non-finite intrinsics"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// 3×4 camera-to-world matrix `[R | t]`, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub [[f64; 4]; 3]);

impl Pose {
    pub const IDENTITY: Pose = Pose([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]);

    /// Pose at `eye` looking toward `target`, with `up` roughly upward.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalized();
        let z = -forward;
        let x = forward.cross(up).normalized();
        let y = z.cross(x);
        Pose([
            [x.x, y.x, z.x, eye.x],
            [x.y, y.y, z.y, eye.y],
            [x.z, y.z, z.z, eye.z],
        ])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.0[0][3], self.0[1][3], self.0[2][3])
    }

    pub fn column(&self, c: usize) -> Vec3 {
        Vec3::new(self.0[0][c], self.0[1][c], self.0[2][c])
    }

    /// `R · v`.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let d = self.column(a).dot(self.column(b)) - if a == b { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Checks orthonormality, right-handedness and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let deviation = self.orthonormality_error();
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(Error::PoseNotOrthonormal { deviation });
        }
        let handed = self.column(0).cross(self.column(1)).dot(self.column(2));
        if handed < 0.0 {
            return Err(Error::PoseNotOrthonormal { deviation: 2.0 });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_is_orthonormal_and_points_at_target() {
        let eye = Vec3::new(2.0, 3.0, -1.0);
        let pose = Pose::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
        pose.validate().unwrap();
        let forward = -pose.column(2);
        let expected = (Vec3::ZERO - eye).normalized();
        assert!((forward - expected).length() < 1e-12);
        assert_eq!(pose.translation(), eye);
    }

    #[test]
    fn scaled_rotation_is_rejected() {
        let mut pose = Pose::IDENTITY;
        pose.0[0][0] = 1.5;
        assert!(matches!(
            pose.validate(),
            Err(Error::PoseNotOrthonormal { .. })
        ));
    }

    #[test]
    fn reflection_is_rejected() {
        let mut pose = Pose::IDENTITY;
        pose.0[2][2] = -1.0;
        assert!(pose.validate().is_err());
    }

    #[test]
    fn camera_invariants() {
        let cam = CameraModel::from_fov(64, 64, 40.0, 1.0, 5.0);
        cam.validate().unwrap();
        let mut bad = cam;
        bad.near = 6.0;
        assert!(bad.validate().is_err());
        let mut small = cam;
        small.width = 4;
        assert!(small.validate().is_err());
    }
}
