use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::so3::{rot_z, so3_log_unchecked, validate_rotation};
use crate::error::Result;

/// Rigid transform: world position and orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        validate_rotation(&rotation)?;
        Ok(Self { position, rotation })
    }

    /// Lifts a planar pose `(x, y, yaw)` into 3-D at height zero.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: Vector3::new(x, y, 0.0),
            rotation: rot_z(yaw),
        }
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            position: self.position + self.rotation * other.position,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.position)
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// Tracking error `[p_d − p; Log(Rᵀ R_d)]` of `current` towards `desired`.
pub fn pose_error(current: &Pose3, desired: &Pose3) -> Result<Vector6<f64>> {
    validate_rotation(&current.rotation)?;
    validate_rotation(&desired.rotation)?;
    Ok(pose_error_unchecked(current, desired))
}

pub(crate) fn pose_error_unchecked(current: &Pose3, desired: &Pose3) -> Vector6<f64> {
    let dp = desired.position - current.position;
    let w = so3_log_unchecked(&(current.rotation.transpose() * desired.rotation));
    Vector6::new(dp.x, dp.y, dp.z, w.x, w.y, w.z)
}
