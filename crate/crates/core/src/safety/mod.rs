//! Collision-avoidance rows for the MPC: barrier values from a distance
//! field, in speed-limiting (CBF) or position-limiting (EDF) form, and
//! sphere-sphere self-collision rows.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose3, RobotModel, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyMode {
    /// `dh/dt + gamma * h >= 0`: limits approach speed near obstacles.
    Cbf,
    /// `h >= 0`: limits position only.
    Edf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySpec {
    pub mode: SafetyMode,
    pub delta_safe: f64,
    /// CBF decay rate (1/s).
    pub gamma: f64,
    /// Sphere index pairs checked for self-collision; `None` uses the
    /// model's non-adjacent pairs.
    pub self_collision_pairs: Option<Vec<(usize, usize)>>,
    pub self_collision_margin: f64,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            mode: SafetyMode::Cbf,
            delta_safe: 0.1,
            gamma: 1.0,
            self_collision_pairs: None,
            self_collision_margin: 0.02,
        }
    }
}

impl SafetySpec {
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if !(self.delta_safe >= 0.0) || !(self.self_collision_margin >= 0.0) {
            return Err(Error::Config("safety margins must be non-negative".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config("safety.gamma must be positive".into()));
        }
        if let Some(pairs) = &self.self_collision_pairs {
            let n = model.spheres.len();
            if let Some((i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n || i == j) {
                return Err(Error::Config(format!("self-collision pair ({i}, {j}) is invalid")));
            }
        }
        Ok(())
    }

    pub fn pairs(&self, model: &RobotModel) -> Vec<(usize, usize)> {
        self.self_collision_pairs.clone().unwrap_or_else(|| model.default_self_collision_pairs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackClass {
    SoftSafety,
    Hard,
}

/// `state . x_k + control . u_k >= lower` at one shooting node.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub stage: usize,
    /// Coefficients over `[q; v]`.
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub lower: f64,
    pub class: SlackClass,
}

impl ConstraintRow {
    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state.dot(x) + self.control.dot(u) - self.lower
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierValue {
    pub h: f64,
    /// `dh/dq`.
    pub grad: DVector<f64>,
    pub out_of_bounds: bool,
}

/// Barrier of one collision sphere against the field.
pub fn barrier_value(grid: &VoxelGrid, model: &RobotModel, q: &DVector<f64>, sphere: usize, delta_safe: f64) -> BarrierValue {
    let frames = model.all_frames(q);
    barrier_with_frames(grid, model, q, &frames, sphere, delta_safe)
}

fn barrier_with_frames(
    grid: &VoxelGrid,
    model: &RobotModel,
    q: &DVector<f64>,
    frames: &[Pose3],
    sphere: usize,
    delta_safe: f64,
) -> BarrierValue {
    let c = model.sphere_center(frames, sphere);
    let sample = grid.trilinear_sample(&c);
    if sample.clamped {
        return BarrierValue { h: -delta_safe, grad: DVector::zeros(q.len()), out_of_bounds: true };
    }
    let j = model.sphere_jacobian(q, frames, sphere);
    let grad = j.tr_mul(&DVector::from_column_slice(sample.gradient.as_slice()));
    BarrierValue { h: sample.value - model.spheres[sphere].radius - delta_safe, grad, out_of_bounds: false }
}

/// Safety rows for every collision sphere at one stage, linearized at the
/// state `x_bar = [q; v]`.
pub fn safety_rows(grid: &VoxelGrid, model: &RobotModel, x_bar: &DVector<f64>, spec: &SafetySpec, stage: usize) -> (Vec<ConstraintRow>, Vec<BarrierValue>) {
    let n = model.dof();
    let q = x_bar.rows(0, n).into_owned();
    let frames = model.all_frames(&q);
    let mut rows = Vec::with_capacity(model.spheres.len());
    let mut values = Vec::with_capacity(model.spheres.len());
    for s in 0..model.spheres.len() {
        let b = barrier_with_frames(grid, model, &q, &frames, s, spec.delta_safe);
        let mut state = DVector::zeros(2 * n);
        let lower = match spec.mode {
            SafetyMode::Cbf => {
                state.rows_mut(n, n).copy_from(&b.grad);
                -spec.gamma * b.h
            }
            SafetyMode::Edf => {
                state.rows_mut(0, n).copy_from(&b.grad);
                b.grad.dot(&q) - b.h
            }
        };
        rows.push(ConstraintRow { stage, state, control: DVector::zeros(n), lower, class: SlackClass::SoftSafety });
        values.push(b);
    }
    (rows, values)
}

/// Value and `d/dq` of `|p_i - p_j| - r_i - r_j - margin`.
pub fn self_collision_value(
    model: &RobotModel,
    q: &DVector<f64>,
    pair: (usize, usize),
    margin: f64,
    previous_direction: Option<Vector3<f64>>,
) -> (f64, DVector<f64>, Vector3<f64>) {
    let frames = model.all_frames(q);
    self_collision_with_frames(model, q, &frames, pair, margin, previous_direction)
}

fn self_collision_with_frames(
    model: &RobotModel,
    q: &DVector<f64>,
    frames: &[Pose3],
    (i, j): (usize, usize),
    margin: f64,
    previous_direction: Option<Vector3<f64>>,
) -> (f64, DVector<f64>, Vector3<f64>) {
    let d = model.sphere_center(frames, i) - model.sphere_center(frames, j);
    let dist = d.norm();
    let dir = if dist > 1e-9 { d / dist } else { previous_direction.unwrap_or_else(Vector3::z) };
    let jac = model.sphere_jacobian(q, frames, i) - model.sphere_jacobian(q, frames, j);
    let grad = jac.tr_mul(&DVector::from_column_slice(dir.as_slice()));
    let value = dist - model.spheres[i].radius - model.spheres[j].radius - margin;
    (value, grad, dir)
}

/// Linearized self-collision rows at configuration `q_bar`.
pub fn self_collision_rows(model: &RobotModel, q_bar: &DVector<f64>, pairs: &[(usize, usize)], margin: f64, stage: usize) -> Vec<ConstraintRow> {
    let n = model.dof();
    let frames = model.all_frames(q_bar);
    pairs
        .iter()
        .map(|&pair| {
            let (value, grad, _) = self_collision_with_frames(model, q_bar, &frames, pair, margin, None);
            let mut state = DVector::zeros(2 * n);
            state.rows_mut(0, n).copy_from(&grad);
            ConstraintRow {
                stage,
                lower: grad.dot(q_bar) - value,
                state,
                control: DVector::zeros(n),
                class: SlackClass::SoftSafety,
            }
        })
        .collect()
}
