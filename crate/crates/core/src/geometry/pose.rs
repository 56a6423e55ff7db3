use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid camera motion from frame 1 to frame 2: `P2 = R * P1 + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// Axis-angle rotation (unit axis times angle in radians).
    #[serde(default)]
    pub rotation: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl Pose {
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(Error::Domain("pose components must be finite".into()));
        }
        let angle = Vector3::from(self.rotation).norm();
        if angle >= PI {
            return Err(Error::Domain(format!(
                "rotation angle {angle} must be below pi"
            )));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&Vector3::from(self.rotation))
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }
}

/// Rodrigues' formula: `R = I + sin(t)/t [r]x + (1 - cos(t))/t^2 [r]x^2`.
pub fn rotation_matrix(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = axis_angle.norm_squared();
    let skew = axis_angle.cross_matrix();
    if theta_sq < 1e-24 {
        return Matrix3::identity() + skew;
    }
    let theta = theta_sq.sqrt();
    Matrix3::identity()
        + skew * (theta.sin() / theta)
        + skew * skew * ((1.0 - theta.cos()) / theta_sq)
}
