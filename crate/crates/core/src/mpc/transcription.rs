//! Multiple-shooting transcription of one single-task MPC problem.

use nalgebra::{DMatrix, DVector, Matrix3, Vector6};

use super::qp::{QpProblem, RowKind, RowTag, SparseRow};
use super::{MpcConfig, TrackingTask};
use crate::error::{Error, Result};
use crate::geometry::{pose_error_unchecked, Pose3, RobotModel, VoxelGrid};
use crate::safety::{safety_rows, self_collision_rows, SafetySpec};

/// Exact zero-order hold of `q'' = u` for `m` coordinates.
pub fn discretize_dynamics(dt: f64, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::identity(2 * m, 2 * m);
    let mut b = DMatrix::zeros(2 * m, m);
    for i in 0..m {
        a[(i, m + i)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(m + i, i)] = dt;
    }
    (a, b)
}

/// Column layout of the decision vector: states `x_0..x_N`, then controls
/// `u_0..u_{N-1}`, then slack columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dof: usize,
    pub nodes: usize,
}

impl Layout {
    pub fn nx(&self) -> usize {
        2 * self.dof
    }

    pub fn x(&self, k: usize) -> usize {
        k * self.nx()
    }

    pub fn u(&self, k: usize) -> usize {
        (self.nodes + 1) * self.nx() + k * self.dof
    }

    pub fn core_vars(&self) -> usize {
        (self.nodes + 1) * self.nx() + self.nodes * self.dof
    }

    pub fn states(&self, z: &[f64]) -> Vec<DVector<f64>> {
        (0..=self.nodes).map(|k| DVector::from_column_slice(&z[self.x(k)..self.x(k) + self.nx()])).collect()
    }

    pub fn controls(&self, z: &[f64]) -> Vec<DVector<f64>> {
        (0..self.nodes).map(|k| DVector::from_column_slice(&z[self.u(k)..self.u(k) + self.dof])).collect()
    }
}

/// Linearized error of one task at one node:
/// `e(q) ~ e0 + E (q - q_bar)` and `de/dt ~ d - F v`.
struct TaskLinearization {
    e0: Vector6<f64>,
    e_jac: DMatrix<f64>,
    rate_offset: Vector6<f64>,
    rate_jac: DMatrix<f64>,
}

fn linearize(model: &RobotModel, task: &TrackingTask, k: usize, q_bar: &DVector<f64>, frames: &[Pose3]) -> TaskLinearization {
    let n = model.dof();
    let pose = frames[task.frame.0];
    let e0 = pose_error_unchecked(&pose, &task.poses[k]);
    let j = model.jacobian_at(q_bar, frames, task.frame, &pose.position);
    let rt: Matrix3<f64> = pose.rotation.transpose();
    let jv = j.rows(0, 3).into_owned();
    let jw = &rt * j.rows(3, 3);
    let mut f = DMatrix::zeros(6, n);
    f.rows_mut(0, 3).copy_from(&jv);
    f.rows_mut(3, 3).copy_from(&jw);
    let (lin, ang) = task.twists[k];
    let ang_body = rt * ang;
    let rate_offset = Vector6::new(lin.x, lin.y, lin.z, ang_body.x, ang_body.y, ang_body.z);
    TaskLinearization { e0, e_jac: -&f, rate_offset, rate_jac: f }
}

/// Nonlinear task error at every node of a state trajectory.
pub fn task_errors(model: &RobotModel, task: &TrackingTask, states: &[DVector<f64>]) -> Vec<Vector6<f64>> {
    let n = model.dof();
    states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let q = x.rows(0, n).into_owned();
            let frames = model.all_frames(&q);
            pose_error_unchecked(&frames[task.frame.0], &task.poses[k.min(task.poses.len() - 1)])
        })
        .collect()
}

/// Trapezoid-weighted tracking cost of `task` along `states`.
pub fn task_cost(model: &RobotModel, task: &TrackingTask, states: &[DVector<f64>], dt: f64) -> f64 {
    let last = states.len().saturating_sub(1);
    task_errors(model, task, states)
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let w = if k == 0 || k == last { 0.5 * dt } else { dt };
            w * (0..6).map(|c| task.q_e[c] * e[c] * e[c]).sum::<f64>()
        })
        .sum()
}

fn stage_weight(k: usize, nodes: usize, dt: f64) -> f64 {
    if k == 0 || k == nodes {
        0.5 * dt
    } else {
        dt
    }
}

/// Adds `1/2 y'Hy + g'y` on the sub-vector `y = z[cols]`.
fn add_quadratic(qp: &mut QpProblem, cols: &[usize], h: &DMatrix<f64>, g: &DVector<f64>) {
    for a in 0..cols.len() {
        for b in a..cols.len() {
            let v = h[(a, b)];
            if v != 0.0 {
                qp.add_hessian(cols[a], cols[b], v);
            }
        }
        qp.linear[cols[a]] += g[a];
    }
}

fn diag6(w: &[f64; 6]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(w))
}

/// Extra information from building one problem.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildInfo {
    /// Slack columns of the state-bound class.
    pub state_slacks: Vec<usize>,
    /// Slack columns of the safety class.
    pub safety_slacks: Vec<usize>,
    /// Smallest barrier value at the linearization point (stages 1..N).
    pub h_min: Option<f64>,
    /// Number of lexicographic rows.
    pub lex_rows: usize,
    /// Some sphere left the distance field.
    pub out_of_bounds: bool,
}

/// Builds the QP of task `l` (0-based) of `stack`, linearized about
/// `lin` (one state per node). `envelopes[i][k]` bounds the error of task
/// `i < l` at node `k`.
#[allow(clippy::too_many_arguments)]
pub fn build_stmpc(
    l: usize,
    stack: &[TrackingTask],
    envelopes: &[Vec<[f64; 6]>],
    grid: Option<&VoxelGrid>,
    safety: Option<&SafetySpec>,
    x_hat: &DVector<f64>,
    lin: &[DVector<f64>],
    model: &RobotModel,
    cfg: &MpcConfig,
) -> Result<(QpProblem, BuildInfo)> {
    let n = model.dof();
    let nodes = cfg.nodes;
    let dt = cfg.dt();
    let lay = Layout { dof: n, nodes };
    if l >= stack.len() {
        return Err(Error::Contract(format!("task index {l} outside stack of {}", stack.len())));
    }
    if envelopes.len() < l {
        return Err(Error::Contract(format!("task {l} needs {l} envelopes, got {}", envelopes.len())));
    }
    if envelopes[..l].iter().any(|e| e.len() != nodes + 1) {
        return Err(Error::Contract("envelope length must equal node count + 1".into()));
    }
    if lin.len() != nodes + 1 || x_hat.len() != 2 * n {
        return Err(Error::Contract("linearization trajectory has wrong shape".into()));
    }
    for t in stack {
        t.validate(model, nodes)?;
    }

    let mut qp = QpProblem::new(lay.core_vars());
    let mut info = BuildInfo::default();
    let task = &stack[l];
    let q_e = diag6(&task.q_e);
    let q_edot = diag6(&task.q_edot);

    let frames: Vec<Vec<Pose3>> = lin.iter().map(|x| model.all_frames(&x.rows(0, n).into_owned())).collect();

    // cost
    for k in 0..=nodes {
        let w = stage_weight(k, nodes, dt);
        let q_bar = lin[k].rows(0, n).into_owned();
        let tl = linearize(model, task, k, &q_bar, &frames[k]);
        let c = tl.e0 - &tl.e_jac * &q_bar;
        let c = DVector::from_column_slice(c.as_slice());
        let h = (tl.e_jac.transpose() * &q_e * &tl.e_jac) * (2.0 * w);
        let g = tl.e_jac.transpose() * &q_e * &c * (2.0 * w);
        let q_cols: Vec<usize> = (lay.x(k)..lay.x(k) + n).collect();
        add_quadratic(&mut qp, &q_cols, &h, &g);
        if k > 0 && cfg.sqp_prox > 0.0 {
            // vanishes at a fixed point, damps full Gauss-Newton steps
            for i in 0..n {
                qp.add_hessian(lay.x(k) + i, lay.x(k) + i, 2.0 * cfg.sqp_prox);
                qp.linear[lay.x(k) + i] -= 2.0 * cfg.sqp_prox * q_bar[i];
            }
        }

        let d = DVector::from_column_slice(tl.rate_offset.as_slice());
        let mut hv = (tl.rate_jac.transpose() * &q_edot * &tl.rate_jac) * (2.0 * w);
        let gv = -(tl.rate_jac.transpose() * &q_edot * &d) * (2.0 * w);
        for i in 0..n {
            hv[(i, i)] += 2.0 * w * cfg.q_x;
        }
        let v_cols: Vec<usize> = (lay.x(k) + n..lay.x(k) + 2 * n).collect();
        add_quadratic(&mut qp, &v_cols, &hv, &gv);
        if k < nodes {
            for i in 0..n {
                qp.add_hessian(lay.u(k) + i, lay.u(k) + i, 2.0 * dt * cfg.q_u);
            }
        }
    }

    // initial state and dynamics (hard)
    for i in 0..2 * n {
        let mut r = SparseRow::new();
        r.push(lay.x(0) + i, 1.0);
        qp.add_eq(r, x_hat[i], RowTag { kind: RowKind::Initial, stage: 0 });
    }
    for k in 0..nodes {
        for i in 0..n {
            let mut r = SparseRow::new();
            r.push(lay.x(k + 1) + i, 1.0);
            r.push(lay.x(k) + i, -1.0);
            r.push(lay.x(k) + n + i, -dt);
            r.push(lay.u(k) + i, -0.5 * dt * dt);
            qp.add_eq(r, 0.0, RowTag { kind: RowKind::Dynamics, stage: k });
            let mut r = SparseRow::new();
            r.push(lay.x(k + 1) + n + i, 1.0);
            r.push(lay.x(k) + n + i, -1.0);
            r.push(lay.u(k) + i, -dt);
            qp.add_eq(r, 0.0, RowTag { kind: RowKind::Dynamics, stage: k });
        }
    }

    // input bounds (hard)
    for k in 0..nodes {
        for i in 0..n {
            let a = model.acceleration_limits[i];
            let tag = RowTag { kind: RowKind::InputBound, stage: k };
            let mut r = SparseRow::new();
            r.push(lay.u(k) + i, 1.0);
            qp.add_ineq(r, -a, tag);
            let mut r = SparseRow::new();
            r.push(lay.u(k) + i, -1.0);
            qp.add_ineq(r, -a, tag);
        }
    }

    // One slack column per stage and soft class: an L1 (exact) penalty on
    // the largest violation of that class at that stage.
    let add_slack = |qp: &mut QpProblem, rho: f64, stage: usize| -> usize {
        let s = qp.add_var();
        qp.linear[s] = rho;
        let mut r = SparseRow::new();
        r.push(s, 1.0);
        qp.add_ineq(r, 0.0, RowTag { kind: RowKind::SlackSign, stage });
        s
    };

    // state bounds (soft)
    for k in 1..=nodes {
        let s = add_slack(&mut qp, cfg.rho_state, k);
        info.state_slacks.push(s);
        let tag = RowTag { kind: RowKind::StateBound, stage: k };
        for i in 0..n {
            let vmax = model.velocity_limits[i];
            let mut r = SparseRow::new();
            r.push(lay.x(k) + n + i, 1.0);
            r.push(s, 1.0);
            qp.add_ineq(r, -vmax, tag);
            let mut r = SparseRow::new();
            r.push(lay.x(k) + n + i, -1.0);
            r.push(s, 1.0);
            qp.add_ineq(r, -vmax, tag);
            let [lo, hi] = model.position_limits[i];
            if lo.is_finite() {
                let mut r = SparseRow::new();
                r.push(lay.x(k) + i, 1.0);
                r.push(s, 1.0);
                qp.add_ineq(r, lo, tag);
            }
            if hi.is_finite() {
                let mut r = SparseRow::new();
                r.push(lay.x(k) + i, -1.0);
                r.push(s, 1.0);
                qp.add_ineq(r, -hi, tag);
            }
        }
    }

    // safety (soft), shooting nodes after the fixed initial state
    let pairs = safety.map(|s| s.pairs(model)).unwrap_or_default();
    let want_self = cfg.self_collision && safety.is_some() && !pairs.is_empty();
    if grid.is_some() || want_self {
        for k in 1..=nodes {
            let s = add_slack(&mut qp, cfg.rho_safety, k);
            info.safety_slacks.push(s);
            let mut rows = Vec::new();
            if let (Some(g), Some(spec)) = (grid, safety) {
                let (r, vals) = safety_rows(g, model, &lin[k], spec, k);
                for b in &vals {
                    info.h_min = Some(info.h_min.map_or(b.h, |h| h.min(b.h)));
                    info.out_of_bounds |= b.out_of_bounds;
                }
                rows.extend(r.into_iter().map(|r| (r, RowKind::Safety)));
            }
            if want_self {
                let spec = safety.expect("checked");
                let q_bar = lin[k].rows(0, n).into_owned();
                let r = self_collision_rows(model, &q_bar, &pairs, spec.self_collision_margin, k);
                rows.extend(r.into_iter().map(|r| (r, RowKind::SelfCollision)));
            }
            for (row, kind) in rows {
                let mut r = SparseRow::new();
                for i in 0..2 * n {
                    r.push(lay.x(k) + i, row.state[i]);
                }
                if k < nodes {
                    for i in 0..n {
                        r.push(lay.u(k) + i, row.control[i]);
                    }
                }
                r.push(s, 1.0);
                qp.add_ineq(r, row.lower, RowTag { kind, stage: k });
            }
        }
    }

    // lexicographic optimality of higher-priority tasks (hard)
    for (i, prior) in stack[..l].iter().enumerate() {
        let comps = prior.active_components();
        if comps.is_empty() {
            continue;
        }
        for k in 0..=nodes {
            let q_bar = lin[k].rows(0, n).into_owned();
            let tl = linearize(model, prior, k, &q_bar, &frames[k]);
            for &c in &comps {
                let ec = tl.e_jac.row(c);
                let offset = tl.e0[c] - (0..n).map(|j| ec[j] * q_bar[j]).sum::<f64>();
                let bound = envelopes[i][k][c] + cfg.eps_lex;
                let tag = RowTag { kind: RowKind::Lexicographic, stage: k };
                // e <= bound  and  -e <= bound
                let mut up = SparseRow::new();
                let mut lo = SparseRow::new();
                for j in 0..n {
                    up.push(lay.x(k) + j, -ec[j]);
                    lo.push(lay.x(k) + j, ec[j]);
                }
                qp.add_ineq(up, offset - bound, tag);
                qp.add_ineq(lo, -bound - offset, tag);
                info.lex_rows += 2;
            }
        }
    }

    if cfg.eps_reg > 0.0 {
        for i in 0..qp.num_vars {
            qp.add_hessian(i, i, cfg.eps_reg);
        }
    }
    Ok((qp, info))
}
