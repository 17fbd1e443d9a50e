//! Hierarchical-task MPC: a lexicographic cascade of single-task MPC
//! problems on the double-integrator whole-body model.

mod controller;
mod qp;
mod transcription;

pub use controller::{extract_command, solve_htmpc, HtmpcController, SlackReport, Solution, SolveStatus};
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpProblem, QpSettings, QpSolution, QpStatus, RowKind, RowTag, SparseRow};
pub use transcription::{build_stmpc, discretize_dynamics, task_cost, task_errors, BuildInfo, Layout};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameId, Pose3, RobotModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Number of shooting intervals.
    pub nodes: usize,
    /// Weight on joint and base velocities.
    pub q_x: f64,
    /// Weight on accelerations.
    pub q_u: f64,
    /// L1 penalty on state-bound violations.
    pub rho_state: f64,
    /// L1 penalty on safety-row violations.
    pub rho_safety: f64,
    /// SQP iterations per task and solve.
    pub sqp_iterations: usize,
    /// Slack granted on lexicographic rows.
    pub eps_lex: f64,
    /// Diagonal regularization of the cost Hessian.
    pub eps_reg: f64,
    /// Proximal weight on configuration steps between SQP iterates.
    pub sqp_prox: f64,
    pub kkt_tol: f64,
    /// A plan older than this (s) is no longer followed.
    pub staleness: f64,
    /// Time constant of the braking command (s).
    pub brake_tau: f64,
    pub self_collision: bool,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            nodes: 20,
            q_x: 1e-3,
            q_u: 1e-2,
            rho_state: 1e3,
            rho_safety: 1e4,
            sqp_iterations: 1,
            eps_lex: 1e-6,
            eps_reg: 1e-8,
            sqp_prox: 0.1,
            kkt_tol: 1e-6,
            staleness: 0.3,
            brake_tau: 0.2,
            self_collision: true,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.nodes as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || self.nodes < 2 {
            return Err(Error::Config("mpc horizon must be positive with at least 2 nodes".into()));
        }
        if self.sqp_iterations == 0 {
            return Err(Error::Config("mpc.sqp_iterations must be at least 1".into()));
        }
        for (name, v) in [
            ("q_x", self.q_x),
            ("q_u", self.q_u),
            ("rho_state", self.rho_state),
            ("rho_safety", self.rho_safety),
            ("eps_lex", self.eps_lex),
            ("eps_reg", self.eps_reg),
            ("sqp_prox", self.sqp_prox),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("mpc.{name} must be non-negative")));
            }
        }
        if !(self.staleness > 0.0) || !(self.brake_tau > 0.0) {
            return Err(Error::Config("mpc staleness and brake_tau must be positive".into()));
        }
        Ok(())
    }
}

/// Pose tracking objective for one frame over the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTask {
    pub name: String,
    pub frame: FrameId,
    /// Desired poses at the `nodes + 1` shooting nodes.
    pub poses: Vec<Pose3>,
    /// Desired world linear and angular velocity at each node.
    pub twists: Vec<(Vector3<f64>, Vector3<f64>)>,
    /// Diagonal error weight over `[position; orientation]`.
    pub q_e: [f64; 6],
    /// Diagonal error-rate weight.
    pub q_edot: [f64; 6],
}

impl TrackingTask {
    /// Base tracking: only x, y and heading are weighted.
    pub fn base(poses: Vec<Pose3>, twists: Vec<(Vector3<f64>, Vector3<f64>)>, w_e: f64, w_edot: f64) -> Self {
        Self {
            name: "base".into(),
            frame: FrameId(0),
            poses,
            twists,
            q_e: [w_e, w_e, 0.0, 0.0, 0.0, w_e],
            q_edot: [w_edot, w_edot, 0.0, 0.0, 0.0, w_edot],
        }
    }

    /// Task on an arbitrary frame with a constant desired pose.
    pub fn hold(name: &str, frame: FrameId, pose: Pose3, nodes: usize, q_e: [f64; 6], q_edot: [f64; 6]) -> Self {
        Self {
            name: name.into(),
            frame,
            poses: vec![pose; nodes + 1],
            twists: vec![(Vector3::zeros(), Vector3::zeros()); nodes + 1],
            q_e,
            q_edot,
        }
    }

    pub fn validate(&self, model: &RobotModel, nodes: usize) -> Result<()> {
        if self.frame.0 >= model.frame_count() {
            return Err(Error::Contract(format!("task {}: unknown frame", self.name)));
        }
        if self.poses.len() != nodes + 1 || self.twists.len() != nodes + 1 {
            return Err(Error::Contract(format!("task {}: expected {} reference samples", self.name, nodes + 1)));
        }
        if self.q_e.iter().chain(&self.q_edot).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Contract(format!("task {}: weights must be non-negative", self.name)));
        }
        Ok(())
    }

    /// Error components that are weighted (and therefore constrained when
    /// the task has higher priority).
    pub fn active_components(&self) -> Vec<usize> {
        (0..6).filter(|&c| self.q_e[c] > 0.0).collect()
    }
}
