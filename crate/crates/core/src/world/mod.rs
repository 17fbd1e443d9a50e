//! Ground-truth semi-static world: boxes, scripted changes, depth sensing,
//! robot integration and clearance oracles.

mod boxes;
mod camera;
mod changes;

use std::collections::VecDeque;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

pub use boxes::BoxObject;
pub use camera::{render_depth, DepthCameraSpec, DepthFrame, RayReturn, ReturnKind};
pub use changes::{apply_scripted_changes, validate_script, ChangeAction, ChangeScript, ScriptedChange, Trigger};

use crate::error::{Error, Result};
use crate::geometry::{RobotModel, RobotState, VoxelGrid};

/// Distance reported when there is no obstacle at all.
pub const FAR_DISTANCE: f64 = 1.0e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub boxes: Vec<BoxObject>,
    /// Height of the ground plane; the ground is observed but never an obstacle.
    pub ground_z: f64,
    pub seed: u64,
}

impl WorldState {
    pub fn new(boxes: Vec<BoxObject>, seed: u64) -> Self {
        Self { time: 0.0, boxes, ground_z: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.boxes.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate box ids".into()));
        }
        if let Some(b) = self.boxes.iter().find(|b| !b.is_valid()) {
            return Err(Error::Config(format!("box {} has invalid size or pose", b.id)));
        }
        Ok(())
    }

    pub fn find(&self, id: u32) -> Option<&BoxObject> {
        self.boxes.iter().find(|b| b.id == id)
    }

    /// Signed distance to the nearest box surface (negative inside a box).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.signed_distance(p))
            .fold(FAR_DISTANCE, f64::min)
    }

    /// Signed distance and closest surface point of the nearest box.
    pub fn closest_obstacle(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        self.boxes
            .iter()
            .map(|b| (b.signed_distance(p), b))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(d, b)| (d, b.closest_surface_point(p)))
    }
}

/// Exact double-integrator step with velocity clamping.
///
/// Returns the new state and whether any velocity was clamped.
pub fn integrate_robot(
    state: &RobotState,
    u: &DVector<f64>,
    dt: f64,
    model: &RobotModel,
) -> Result<(RobotState, bool)> {
    if !(dt > 0.0) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    if u.len() != state.v.len() {
        return Err(Error::Contract("control dimension mismatch".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("acceleration command"));
    }
    let q = &state.q + &state.v * dt + u * (0.5 * dt * dt);
    let mut v = &state.v + u * dt;
    let mut clamped = false;
    for (i, vi) in v.iter_mut().enumerate() {
        let lim = model.velocity_limits[i];
        if vi.abs() > lim {
            *vi = vi.clamp(-lim, lim);
            clamped = true;
        }
    }
    Ok((RobotState { q, v }, clamped))
}

/// Unsigned distance to the union of box surfaces on a regular grid.
pub fn ground_truth_edf(world: &WorldState, lower: Vector3<f64>, upper: Vector3<f64>, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) || (0..3).any(|a| !(upper[a] > lower[a])) {
        return Err(Error::Contract("ground-truth EDF region must be non-empty".into()));
    }
    let dims = [0, 1, 2].map(|a| ((upper[a] - lower[a]) / voxel_size).round() as usize + 1);
    let mut grid = VoxelGrid::filled(lower, voxel_size, dims, FAR_DISTANCE);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = grid.node_position(i, j, k);
                let d = world
                    .boxes
                    .iter()
                    .map(|b| b.signed_distance(&p).abs())
                    .fold(FAR_DISTANCE, f64::min);
                let idx = grid.index(i, j, k);
                grid.values[idx] = d;
            }
        }
    }
    Ok(grid)
}

/// Minimum over collision spheres of the signed surface distance of the
/// sphere center minus its radius; negative means collision.
pub fn whole_body_clearance(world: &WorldState, model: &RobotModel, q: &DVector<f64>) -> f64 {
    model
        .sphere_centers(q)
        .iter()
        .zip(&model.spheres)
        .map(|(c, s)| world.signed_distance(c) - s.radius)
        .fold(f64::INFINITY, f64::min)
}

/// FIFO that releases items once simulated time reaches their release time.
#[derive(Clone, Debug)]
pub struct DelayQueue<T> {
    items: VecDeque<(f64, T)>,
}

impl<T> Default for DelayQueue<T> {
    fn default() -> Self {
        Self { items: VecDeque::new() }
    }
}

impl<T> DelayQueue<T> {
    pub fn push(&mut self, release_time: f64, item: T) {
        // keep release order stable for equal latencies
        let pos = self.items.iter().rposition(|(t, _)| *t <= release_time).map_or(0, |p| p + 1);
        self.items.insert(pos, (release_time, item));
    }

    pub fn pop_ready(&mut self, now: f64) -> Vec<T> {
        let mut out = Vec::new();
        while self.items.front().is_some_and(|(t, _)| *t <= now) {
            out.push(self.items.pop_front().expect("non-empty").1);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrate_at_rest_is_identity() {
        let m = RobotModel::reference();
        let s = RobotState::at_rest(m.default_configuration());
        let (n, clamped) = integrate_robot(&s, &DVector::zeros(6), 0.1, &m).unwrap();
        assert_eq!(n, s);
        assert!(!clamped);
    }

    #[test]
    fn integrate_closed_form() {
        let m = RobotModel::reference();
        let s = RobotState::at_rest(DVector::zeros(6));
        let mut u = DVector::zeros(6);
        u[0] = 1.0;
        let (n, _) = integrate_robot(&s, &u, 0.1, &m).unwrap();
        assert!((n.q[0] - 0.005).abs() < 1e-15);
        assert!((n.v[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn integrate_rejects_nan_and_clamps() {
        let m = RobotModel::reference();
        let s = RobotState::at_rest(DVector::zeros(6));
        let mut u = DVector::zeros(6);
        u[1] = f64::NAN;
        assert!(integrate_robot(&s, &u, 0.1, &m).is_err());
        u[1] = 100.0;
        let (n, clamped) = integrate_robot(&s, &u, 0.1, &m).unwrap();
        assert!(clamped);
        assert_eq!(n.v[1], m.velocity_limits[1]);
    }

    #[test]
    fn gt_edf_values() {
        let w = WorldState::new(vec![BoxObject { id: 1, x: 0.5, y: 0.5, yaw: 0.0, size: [1.0; 3], level: 0 }], 0);
        let g = ground_truth_edf(&w, Vector3::new(-1.0, -1.0, 0.0), Vector3::new(3.0, 2.0, 2.0), 0.5).unwrap();
        let s = g.trilinear_sample(&Vector3::new(2.0, 0.5, 0.5));
        assert!((s.value - 1.0).abs() < 1e-12);
        let empty = ground_truth_edf(&WorldState::new(vec![], 0), Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 0.5).unwrap();
        assert!(empty.values.iter().all(|v| *v == FAR_DISTANCE));
    }

    #[test]
    fn clearance_zero_at_contact() {
        let m = RobotModel::reference();
        let q = m.default_configuration();
        let centers = m.sphere_centers(&q);
        // place a box face exactly one radius in front of the front base sphere
        let c = centers[0];
        let r = m.spheres[0].radius;
        let b = BoxObject { id: 1, x: c.x + r + 0.5, y: c.y, yaw: 0.0, size: [1.0, 0.2, 0.5], level: 0 };
        let w = WorldState::new(vec![b], 0);
        let clearance = whole_body_clearance(&w, &m, &q);
        assert!(clearance.abs() < 1e-9, "{clearance}");
    }

    #[test]
    fn delay_queue_releases_in_order() {
        let mut q = DelayQueue::default();
        q.push(0.5, "a");
        q.push(0.2, "b");
        q.push(0.5, "c");
        assert!(q.pop_ready(0.1).is_empty());
        assert_eq!(q.pop_ready(0.3), vec!["b"]);
        assert_eq!(q.pop_ready(0.5), vec!["a", "c"]);
        assert!(q.is_empty());
    }
}
