//! Kinematic model of an omnidirectional base carrying a planar revolute arm.
//!
//! Generalized coordinates are `[x, y, θ, q_1 … q_k]`. The arm moves in the
//! vertical plane that contains the base heading; every arm joint rotates about
//! the base's `−y` axis so that positive angles lift the arm. Base velocities
//! are world-frame, so `q̇ = v` for every coordinate.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::Pose3;
use super::so3::rot_y;
use crate::error::{Error, Result};

pub const BASE_DOF: usize = 3;
pub const BASE_FRAME: &str = "base";
pub const SHOULDER_FRAME: &str = "shoulder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmLink {
    /// Name of the frame at the distal end of the link.
    pub name: String,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSphere {
    pub frame: String,
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    /// Shoulder joint location in the base frame.
    pub arm_mount: [f64; 3],
    pub links: Vec<ArmLink>,
    pub spheres: Vec<CollisionSphere>,
    /// `[lower, upper]` per generalized coordinate; base entries are usually infinite.
    pub position_limits: Vec<[f64; 2]>,
    pub velocity_limits: Vec<f64>,
    pub acceleration_limits: Vec<f64>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::reference()
    }
}

impl RobotModel {
    /// Desk-scale reference robot: 3-DoF base plus a 3-R arm.
    pub fn reference() -> Self {
        let inf = f64::INFINITY;
        Self {
            arm_mount: [0.15, 0.0, 0.55],
            links: vec![
                ArmLink { name: "elbow".into(), length: 0.45 },
                ArmLink { name: "wrist".into(), length: 0.40 },
                ArmLink { name: "ee".into(), length: 0.15 },
            ],
            spheres: vec![
                CollisionSphere { frame: "base".into(), offset: [0.15, 0.0, 0.25], radius: 0.25 },
                CollisionSphere { frame: "base".into(), offset: [-0.15, 0.0, 0.25], radius: 0.25 },
                CollisionSphere { frame: "elbow".into(), offset: [0.0, 0.0, 0.0], radius: 0.08 },
                CollisionSphere { frame: "wrist".into(), offset: [0.0, 0.0, 0.0], radius: 0.08 },
                CollisionSphere { frame: "ee".into(), offset: [0.0, 0.0, 0.0], radius: 0.06 },
            ],
            position_limits: vec![
                [-inf, inf],
                [-inf, inf],
                [-inf, inf],
                [-0.3, 2.6],
                [-2.7, 0.3],
                [-1.6, 1.6],
            ],
            velocity_limits: vec![1.0, 1.0, 1.5, 1.5, 1.5, 1.5],
            acceleration_limits: vec![1.5, 1.5, 3.0, 3.0, 3.0, 3.0],
        }
    }

    pub fn dof(&self) -> usize {
        BASE_DOF + self.links.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if self.links.is_empty() {
            return Err(Error::InvalidModel("arm has no links".into()));
        }
        if self.links.iter().any(|l| !(l.length > 0.0)) {
            return Err(Error::InvalidModel("link lengths must be positive".into()));
        }
        if self.position_limits.len() != n
            || self.velocity_limits.len() != n
            || self.acceleration_limits.len() != n
        {
            return Err(Error::InvalidModel(format!("limit vectors must have length {n}")));
        }
        if self.position_limits.iter().any(|[lo, hi]| lo > hi) {
            return Err(Error::InvalidModel("position limit lower > upper".into()));
        }
        if self.velocity_limits.iter().chain(&self.acceleration_limits).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidModel("velocity/acceleration limits must be positive".into()));
        }
        let mut names = vec![BASE_FRAME, SHOULDER_FRAME];
        for l in &self.links {
            if names.contains(&l.name.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate frame `{}`", l.name)));
            }
            names.push(&l.name);
        }
        let mut base_spheres = 0;
        let mut arm_spheres = 0;
        for s in &self.spheres {
            let id = self
                .frame_id(&s.frame)
                .map_err(|_| Error::InvalidModel(format!("sphere parent `{}` not in chain", s.frame)))?;
            if !(s.radius > 0.0) {
                return Err(Error::InvalidModel("sphere radius must be positive".into()));
            }
            if id.0 == 0 {
                base_spheres += 1;
            } else {
                arm_spheres += 1;
            }
        }
        if base_spheres < 1 || arm_spheres < 2 {
            return Err(Error::InvalidModel(
                "need at least one base sphere and two arm spheres".into(),
            ));
        }
        Ok(())
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId> {
        match name {
            BASE_FRAME => Ok(FrameId(0)),
            SHOULDER_FRAME => Ok(FrameId(1)),
            _ => self
                .links
                .iter()
                .position(|l| l.name == name)
                .map(|i| FrameId(2 + i))
                .ok_or_else(|| Error::UnknownFrame(name.to_string())),
        }
    }

    pub fn ee_frame(&self) -> FrameId {
        FrameId(1 + self.links.len())
    }

    pub fn frame_name(&self, id: FrameId) -> &str {
        match id.0 {
            0 => BASE_FRAME,
            1 => SHOULDER_FRAME,
            i => &self.links[i - 2].name,
        }
    }

    pub fn frame_count(&self) -> usize {
        2 + self.links.len()
    }

    /// Number of arm joints that move `frame`.
    fn arm_joints_affecting(&self, frame: FrameId) -> usize {
        match frame.0 {
            0 => 0,
            1 => 1,
            i => i - 1,
        }
    }

    /// World poses of every frame: base, shoulder, then each link end.
    pub fn all_frames(&self, q: &DVector<f64>) -> Vec<Pose3> {
        let base = Pose3::planar(q[0], q[1], q[2]);
        let rz = base.rotation;
        let mount = base.transform_point(&Vector3::from(self.arm_mount));
        let mut out = Vec::with_capacity(self.frame_count());
        out.push(base);
        let mut phi = q[BASE_DOF];
        out.push(Pose3 { position: mount, rotation: rz * rot_y(-phi) });
        let mut p = mount;
        for (i, link) in self.links.iter().enumerate() {
            if i > 0 {
                phi += q[BASE_DOF + i];
            }
            let dir = rz * Vector3::new(phi.cos(), 0.0, phi.sin());
            p += dir * link.length;
            out.push(Pose3 { position: p, rotation: rz * rot_y(-phi) });
        }
        out
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>, frame: &str) -> Result<Pose3> {
        let id = self.frame_id(frame)?;
        self.check_q(q)?;
        Ok(self.frame_pose(q, id))
    }

    pub fn frame_pose(&self, q: &DVector<f64>, id: FrameId) -> Pose3 {
        self.all_frames(q)[id.0]
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Contract(format!("q has length {}, expected {}", q.len(), self.dof())));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q"));
        }
        Ok(())
    }

    /// 6×n Jacobian mapping `v` to the frame's world twist `[linear; angular]`.
    pub fn frame_jacobian(&self, q: &DVector<f64>, frame: &str) -> Result<DMatrix<f64>> {
        let id = self.frame_id(frame)?;
        self.check_q(q)?;
        let frames = self.all_frames(q);
        Ok(self.jacobian_at(q, &frames, id, &frames[id.0].position))
    }

    /// Jacobian of a point rigidly attached to `frame` (linear rows) together
    /// with the frame's angular rows.
    pub fn jacobian_at(
        &self,
        q: &DVector<f64>,
        frames: &[Pose3],
        frame: FrameId,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let n = self.dof();
        let mut j = DMatrix::zeros(6, n);
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        // yaw: ẑ × (p − base origin)
        let r = point - Vector3::new(q[0], q[1], 0.0);
        j[(0, 2)] = -r.y;
        j[(1, 2)] = r.x;
        j[(5, 2)] = 1.0;
        let axis = frames[0].rotation * Vector3::new(0.0, -1.0, 0.0);
        for k in 0..self.arm_joints_affecting(frame) {
            let joint_pos = frames[1 + k].position;
            let lin = axis.cross(&(point - joint_pos));
            let col = BASE_DOF + k;
            for row in 0..3 {
                j[(row, col)] = lin[row];
                j[(3 + row, col)] = axis[row];
            }
        }
        j
    }

    pub fn sphere_center(&self, frames: &[Pose3], sphere: usize) -> Vector3<f64> {
        let s = &self.spheres[sphere];
        let id = self.frame_id(&s.frame).expect("validated model");
        frames[id.0].transform_point(&Vector3::from(s.offset))
    }

    pub fn sphere_centers(&self, q: &DVector<f64>) -> Vec<Vector3<f64>> {
        let frames = self.all_frames(q);
        (0..self.spheres.len()).map(|j| self.sphere_center(&frames, j)).collect()
    }

    /// 3×n position Jacobian of a sphere center.
    pub fn sphere_jacobian(&self, q: &DVector<f64>, frames: &[Pose3], sphere: usize) -> DMatrix<f64> {
        let id = self.frame_id(&self.spheres[sphere].frame).expect("validated model");
        let c = self.sphere_center(frames, sphere);
        self.jacobian_at(q, frames, id, &c).rows(0, 3).into_owned()
    }

    /// Radius of the smallest vertical cylinder around the base origin that
    /// contains every base sphere.
    pub fn base_circumscribed_radius(&self) -> f64 {
        self.spheres
            .iter()
            .filter(|s| s.frame == BASE_FRAME)
            .map(|s| (s.offset[0].hypot(s.offset[1])) + s.radius)
            .fold(0.0, f64::max)
    }

    pub fn base_sphere_indices(&self) -> Vec<usize> {
        (0..self.spheres.len()).filter(|&j| self.spheres[j].frame == BASE_FRAME).collect()
    }

    /// Sphere pairs that may collide: different parent frames that are not
    /// adjacent in the chain.
    pub fn default_self_collision_pairs(&self) -> Vec<(usize, usize)> {
        let ids: Vec<usize> = self
            .spheres
            .iter()
            .map(|s| self.frame_id(&s.frame).expect("validated model").0)
            .collect();
        let mut pairs = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let (a, b) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                // base(0) and shoulder(1) are rigidly coupled; skip links sharing a joint
                let adjacent = b - a <= 1 || (a == 0 && b <= 2);
                if !adjacent {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    pub fn default_configuration(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.dof());
        let tucked = [1.2, -2.0, 0.8];
        for (i, v) in tucked.iter().enumerate().take(self.links.len()) {
            q[BASE_DOF + i] = *v;
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn reference_model_is_valid() {
        RobotModel::reference().validate().unwrap();
        assert_eq!(RobotModel::reference().dof(), 6);
    }

    #[test]
    fn zero_q_base_frame_is_identity() {
        let m = RobotModel::reference();
        let p = m.forward_kinematics(&DVector::zeros(6), "base").unwrap();
        assert_eq!(p, Pose3::identity());
    }

    #[test]
    fn base_frame_lifts_planar_pose() {
        let m = RobotModel::reference();
        let q = DVector::from_vec(vec![1.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0]);
        let p = m.forward_kinematics(&q, "base").unwrap();
        assert!((p.position - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((p.rotation - rot_z(FRAC_PI_2)).abs().max() < 1e-15);
    }

    #[test]
    fn unknown_frame_is_rejected() {
        let m = RobotModel::reference();
        assert!(matches!(m.forward_kinematics(&DVector::zeros(6), "gripper"), Err(Error::UnknownFrame(_))));
        assert!(m.frame_jacobian(&DVector::zeros(6), "gripper").is_err());
    }

    #[test]
    fn base_jacobian_selects_base_velocities() {
        let m = RobotModel::reference();
        let q = DVector::from_vec(vec![0.4, -1.0, 0.7, 0.3, -0.5, 0.2]);
        let j = m.frame_jacobian(&q, "base").unwrap();
        assert_eq!(j[(0, 0)], 1.0);
        assert_eq!(j[(1, 1)], 1.0);
        assert_eq!(j[(5, 2)], 1.0);
        assert!(j.columns(3, 3).iter().all(|v| *v == 0.0));
        assert!(j.column(2).rows(0, 5).norm() < 1e-15);
    }

    #[test]
    fn extended_arm_vertical_rate_equals_reach() {
        let m = RobotModel::reference();
        let j = m.frame_jacobian(&DVector::zeros(6), "ee").unwrap();
        let reach: f64 = m.links.iter().map(|l| l.length).sum();
        assert!((j[(2, 3)] - reach).abs() < 1e-12);
    }

    #[test]
    fn invalid_models() {
        let mut m = RobotModel::reference();
        m.spheres[0].frame = "nope".into();
        assert!(m.validate().is_err());
        let mut m = RobotModel::reference();
        m.spheres.retain(|s| s.frame == "base" || s.frame == "ee");
        assert!(m.validate().is_err());
        let mut m = RobotModel::reference();
        m.spheres[2].radius = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn self_collision_pairs_skip_adjacent() {
        let m = RobotModel::reference();
        let pairs = m.default_self_collision_pairs();
        assert_eq!(pairs, vec![(0, 3), (0, 4), (1, 3), (1, 4), (2, 4)]);
    }
}
