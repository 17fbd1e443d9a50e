//! Lexicographic cascade, warm starting and command extraction.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpStatus};
use super::transcription::{build_stmpc, task_cost, task_errors, Layout};
use super::{MpcConfig, TrackingTask};
use crate::error::{Error, Result};
use crate::geometry::{RobotModel, VoxelGrid};
use crate::safety::SafetySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Some QP stopped at its iteration cap; the last accepted iterate is used.
    MaxIterations,
    /// A hard row set was infeasible or the solver failed; the plan is a
    /// braking placeholder.
    Emergency { task: usize, reason: String },
}

/// Largest slack per soft class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub state: f64,
    pub safety: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// `envelopes[i][k][c]`: `|e|` of task `i` at node `k`, component `c`.
    pub envelopes: Vec<Vec<[f64; 6]>>,
    /// Tracking cost of each task at its own accepted iterate.
    pub task_costs: Vec<f64>,
    pub slacks: SlackReport,
    pub status: SolveStatus,
    pub dt: f64,
    pub qp_iterations: u32,
    pub qp_solves: u32,
    /// Largest scaled KKT residual over accepted solves.
    pub kkt_max: f64,
    /// Smallest barrier value seen while linearizing.
    pub h_min: Option<f64>,
    pub out_of_bounds: bool,
}

impl Solution {
    pub fn is_emergency(&self) -> bool {
        matches!(self.status, SolveStatus::Emergency { .. })
    }

    /// Planned velocity at `t` seconds after the solve, linearly
    /// interpolated between nodes and held after the horizon.
    pub fn velocity_at(&self, t: f64) -> DVector<f64> {
        let n = self.controls.first().map_or(self.states[0].len() / 2, |u| u.len());
        let v = |k: usize| self.states[k].rows(n, n).into_owned();
        let last = self.states.len() - 1;
        if !(t > 0.0) {
            return v(0);
        }
        let s = t / self.dt;
        let k = s.floor() as usize;
        if k >= last {
            return v(last);
        }
        let f = s - k as f64;
        v(k) * (1.0 - f) + v(k + 1) * f
    }
}

/// Velocity command `elapsed` seconds after the solve. Emergency plans and
/// plans older than the staleness bound decay exponentially to rest.
pub fn extract_command(solution: &Solution, elapsed: f64, cfg: &MpcConfig) -> DVector<f64> {
    let elapsed = elapsed.max(0.0);
    if solution.is_emergency() {
        return solution.velocity_at(0.0) * (-elapsed / cfg.brake_tau).exp();
    }
    if elapsed <= cfg.staleness {
        return solution.velocity_at(elapsed);
    }
    solution.velocity_at(cfg.staleness) * (-(elapsed - cfg.staleness) / cfg.brake_tau).exp()
}

fn emergency(x_hat: &DVector<f64>, cfg: &MpcConfig, n: usize, task: usize, reason: String) -> Solution {
    Solution {
        states: vec![x_hat.clone(); cfg.nodes + 1],
        controls: vec![DVector::zeros(n); cfg.nodes],
        envelopes: Vec::new(),
        task_costs: Vec::new(),
        slacks: SlackReport::default(),
        status: SolveStatus::Emergency { task, reason },
        dt: cfg.dt(),
        qp_iterations: 0,
        qp_solves: 0,
        kkt_max: 0.0,
        h_min: None,
        out_of_bounds: false,
    }
}

/// Solves the task cascade from `x_hat`. `warm` is a state trajectory used
/// as the first linearization point (typically the previous plan shifted by
/// one node); without it the current state is held over the horizon.
#[allow(clippy::too_many_arguments)]
pub fn solve_htmpc(
    model: &RobotModel,
    stack: &[TrackingTask],
    x_hat: &DVector<f64>,
    grid: Option<&VoxelGrid>,
    safety: Option<&SafetySpec>,
    cfg: &MpcConfig,
    warm: Option<&[DVector<f64>]>,
) -> Result<Solution> {
    let n = model.dof();
    if stack.is_empty() {
        return Err(Error::Contract("task stack must not be empty".into()));
    }
    if x_hat.len() != 2 * n || x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("state estimate has wrong size or is not finite".into()));
    }
    let lay = Layout { dof: n, nodes: cfg.nodes };
    let mut lin: Vec<DVector<f64>> = match warm {
        Some(w) if w.len() == cfg.nodes + 1 => w.to_vec(),
        _ => vec![x_hat.clone(); cfg.nodes + 1],
    };
    lin[0] = x_hat.clone();

    let mut envelopes: Vec<Vec<[f64; 6]>> = Vec::with_capacity(stack.len());
    let mut task_costs = Vec::with_capacity(stack.len());
    let mut controls = vec![DVector::zeros(n); cfg.nodes];
    let mut slacks = SlackReport::default();
    let mut status = SolveStatus::Optimal;
    let (mut qp_iterations, mut qp_solves, mut kkt_max) = (0u32, 0u32, 0.0f64);
    let mut h_min: Option<f64> = None;
    let mut out_of_bounds = false;

    for l in 0..stack.len() {
        let mut accepted = false;
        for it in 0..cfg.sqp_iterations {
            let (qp, info) = build_stmpc(l, stack, &envelopes, grid, safety, x_hat, &lin, model, cfg)?;
            if let Some(h) = info.h_min {
                h_min = Some(h_min.map_or(h, |m| m.min(h)));
            }
            out_of_bounds |= info.out_of_bounds;
            let sol = solve_qp(&qp, &cfg.qp)?;
            qp_iterations += sol.iterations;
            qp_solves += 1;
            match &sol.status {
                QpStatus::Optimal => {}
                QpStatus::MaxIterations if accepted => {
                    status = SolveStatus::MaxIterations;
                    break;
                }
                QpStatus::MaxIterations if sol.kkt.primal < 1e-6 => {
                    // usable but not certified
                    status = SolveStatus::MaxIterations;
                }
                other => {
                    if accepted {
                        status = SolveStatus::MaxIterations;
                        break;
                    }
                    let reason = match other {
                        QpStatus::Infeasible { rows } => {
                            let kinds: Vec<String> = rows
                                .iter()
                                .filter_map(|&r| {
                                    let tag = if r < qp.eq_tags.len() { qp.eq_tags[r] } else { qp.ineq_tags[r - qp.eq_tags.len()] };
                                    tag.kind.is_hard().then(|| format!("{:?}@{}", tag.kind, tag.stage))
                                })
                                .collect();
                            format!("infeasible hard rows: {}", kinds.join(","))
                        }
                        QpStatus::MaxIterations => "iteration cap without a feasible iterate".into(),
                        QpStatus::Failed { reason } => reason.clone(),
                        QpStatus::Optimal => unreachable!(),
                    };
                    return Ok(emergency(x_hat, cfg, n, l, reason));
                }
            }
            kkt_max = kkt_max.max(sol.kkt.max());
            let states = lay.states(&sol.z);
            let step = states
                .iter()
                .zip(&lin)
                .map(|(a, b)| (a - b).amax())
                .fold(0.0f64, f64::max);
            lin = states;
            controls = lay.controls(&sol.z);
            slacks.state = info.state_slacks.iter().map(|&s| sol.z[s]).fold(0.0, f64::max);
            slacks.safety = info.safety_slacks.iter().map(|&s| sol.z[s]).fold(0.0, f64::max);
            accepted = true;
            if it > 0 && step < 1e-10 {
                break;
            }
        }
        let errs = task_errors(model, &stack[l], &lin);
        envelopes.push(errs.iter().map(|e| [0, 1, 2, 3, 4, 5].map(|c| e[c].abs())).collect());
        task_costs.push(task_cost(model, &stack[l], &lin, cfg.dt()));
    }

    Ok(Solution {
        states: lin,
        controls,
        envelopes,
        task_costs,
        slacks,
        status,
        dt: cfg.dt(),
        qp_iterations,
        qp_solves,
        kkt_max,
        h_min,
        out_of_bounds,
    })
}

/// Stateful wrapper that warm-starts each solve from the previous plan.
#[derive(Clone, Debug)]
pub struct HtmpcController {
    pub model: RobotModel,
    pub config: MpcConfig,
    pub safety: Option<SafetySpec>,
    previous: Option<Solution>,
}

impl HtmpcController {
    pub fn new(model: RobotModel, config: MpcConfig, safety: Option<SafetySpec>) -> Self {
        Self { model, config, safety, previous: None }
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn previous(&self) -> Option<&Solution> {
        self.previous.as_ref()
    }

    /// Previous plan advanced by `shift` nodes, last node repeated.
    fn warm_start(&self, shift: usize) -> Option<Vec<DVector<f64>>> {
        let prev = self.previous.as_ref().filter(|p| !p.is_emergency())?;
        let last = prev.states.len() - 1;
        Some((0..=last).map(|k| prev.states[(k + shift).min(last)].clone()).collect())
    }

    /// Solves from `x_hat`; `shift` is the number of nodes elapsed since
    /// the previous solve (1 in a loop running at the node spacing).
    pub fn solve(&mut self, stack: &[TrackingTask], x_hat: &DVector<f64>, grid: Option<&VoxelGrid>, shift: usize) -> Result<Solution> {
        let warm = self.warm_start(shift);
        let sol = solve_htmpc(&self.model, stack, x_hat, grid, self.safety.as_ref(), &self.config, warm.as_deref())?;
        self.previous = Some(sol.clone());
        Ok(sol)
    }
}
