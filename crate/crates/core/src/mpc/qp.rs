//! Sparse convex QP container and interior-point solve.
//!
//! Problem form:
//!
//! ```text
//! minimize   1/2 z'Pz + c'z
//! subject to A_eq z  = b_eq
//!            G z    >= g
//! ```
//!
//! The solve is delegated to Clarabel; KKT residuals are recomputed here
//! from the returned primal/dual pair so callers never rely on the
//! solver's internal scaling.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Dynamics,
    Initial,
    InputBound,
    StateBound,
    Safety,
    SelfCollision,
    Lexicographic,
    SlackSign,
    Other,
}

impl RowKind {
    pub fn is_hard(&self) -> bool {
        !matches!(self, RowKind::StateBound | RowKind::Safety | RowKind::SelfCollision)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowTag {
    pub kind: RowKind,
    pub stage: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, col: usize, val: f64) {
        if val != 0.0 {
            self.cols.push(col);
            self.vals.push(val);
        }
    }

    pub fn dot(&self, z: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, v)| v * z[c]).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpProblem {
    pub num_vars: usize,
    /// Upper-triangle entries `(i, j, v)` with `i <= j`; duplicates add.
    pub hessian: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub eq_tags: Vec<RowTag>,
    pub ineq_rows: Vec<SparseRow>,
    pub ineq_lower: Vec<f64>,
    pub ineq_tags: Vec<RowTag>,
}

impl QpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, linear: vec![0.0; num_vars], ..Default::default() }
    }

    /// Adds `v` to `P[i][j]` and `P[j][i]` (once on the diagonal).
    pub fn add_hessian(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.hessian.push((i.min(j), i.max(j), v));
        }
    }

    pub fn add_eq(&mut self, row: SparseRow, rhs: f64, tag: RowTag) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_tags.push(tag);
    }

    pub fn add_ineq(&mut self, row: SparseRow, lower: f64, tag: RowTag) {
        self.ineq_rows.push(row);
        self.ineq_lower.push(lower);
        self.ineq_tags.push(tag);
    }

    /// Adds a new variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.linear.push(0.0);
        self.num_vars - 1
    }

    pub fn hessian_times(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars];
        for &(i, j, v) in &self.hessian {
            out[i] += v * z[j];
            if i != j {
                out[j] += v * z[i];
            }
        }
        out
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let pz = self.hessian_times(z);
        0.5 * pz.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.linear.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.linear.len() != n {
            return Err(Error::Contract("linear cost length mismatch".into()));
        }
        let bad_row = |r: &SparseRow| r.cols.iter().any(|&c| c >= n) || r.vals.iter().any(|v| !v.is_finite());
        if self.eq_rows.iter().chain(&self.ineq_rows).any(bad_row) {
            return Err(Error::Contract("constraint row out of range or non-finite".into()));
        }
        if self.hessian.iter().any(|&(i, j, v)| i > j || j >= n || !v.is_finite()) {
            return Err(Error::Contract("hessian entry out of range or non-finite".into()));
        }
        if self.eq_rhs.iter().chain(&self.linear).any(|v| !v.is_finite()) || self.ineq_lower.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("qp data"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    /// Hard rows that carry the infeasibility certificate.
    Infeasible { rows: Vec<usize> },
    Failed { reason: String },
}

/// Scaled KKT residuals (infinity norms).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    /// Non-negative multipliers of the inequality rows.
    pub lambda: Vec<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub max_iter: u32,
    /// Interior-point termination tolerance.
    pub tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10 }
    }
}

/// Residuals of a primal/dual pair for `qp`, each scaled by the magnitude
/// of the terms it balances (never below 1).
pub fn kkt_residuals(qp: &QpProblem, z: &[f64], y: &[f64], lambda: &[f64]) -> KktResiduals {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let pz = qp.hessian_times(z);
    let mut grad = pz.clone();
    for (g, c) in grad.iter_mut().zip(&qp.linear) {
        *g += c;
    }
    let mut at_y = vec![0.0; qp.num_vars];
    for (r, yi) in qp.eq_rows.iter().zip(y) {
        for (&c, v) in r.cols.iter().zip(&r.vals) {
            at_y[c] += v * yi;
        }
    }
    let mut gt_l = vec![0.0; qp.num_vars];
    for (r, li) in qp.ineq_rows.iter().zip(lambda) {
        for (&c, v) in r.cols.iter().zip(&r.vals) {
            gt_l[c] += v * li;
        }
    }
    let stat: Vec<f64> = (0..qp.num_vars).map(|i| grad[i] - at_y[i] - gt_l[i]).collect();
    let stat_scale = 1f64.max(inf(&pz)).max(inf(&qp.linear)).max(inf(&at_y)).max(inf(&gt_l));

    let mut primal: f64 = 0.0;
    let mut primal_scale: f64 = 1.0;
    for (r, b) in qp.eq_rows.iter().zip(&qp.eq_rhs) {
        let az = r.dot(z);
        primal = primal.max((az - b).abs());
        primal_scale = primal_scale.max(az.abs()).max(b.abs());
    }
    let mut comp: f64 = 0.0;
    for ((r, g), l) in qp.ineq_rows.iter().zip(&qp.ineq_lower).zip(lambda) {
        if !g.is_finite() {
            continue;
        }
        let gz = r.dot(z);
        let gap = gz - g;
        primal = primal.max((-gap).max(0.0));
        primal_scale = primal_scale.max(gz.abs()).max(g.abs());
        comp = comp.max((l * gap).abs() / 1f64.max(l.abs()).max(gap.abs()).max(gz.abs()));
    }
    let dual = lambda.iter().fold(0.0f64, |m, l| m.max((-l).max(0.0)));
    KktResiduals {
        stationarity: inf(&stat) / stat_scale,
        primal: primal / primal_scale,
        dual,
        complementarity: comp,
    }
}

pub fn solve_qp(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.num_vars;
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j, v) in &qp.hessian {
        pi.push(i);
        pj.push(j);
        pv.push(v);
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    // Clarabel form: A x + s = b with s in cones
    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    for (r, rhs) in qp.eq_rows.iter().zip(&qp.eq_rhs) {
        let row = b.len();
        for (&c, v) in r.cols.iter().zip(&r.vals) {
            ai.push(row);
            aj.push(c);
            av.push(*v);
        }
        b.push(*rhs);
    }
    let n_eq = b.len();
    let mut ineq_map = Vec::new();
    for (k, (r, g)) in qp.ineq_rows.iter().zip(&qp.ineq_lower).enumerate() {
        if !g.is_finite() {
            continue;
        }
        let row = b.len();
        for (&c, v) in r.cols.iter().zip(&r.vals) {
            ai.push(row);
            aj.push(c);
            av.push(-v);
        }
        b.push(-g);
        ineq_map.push(k);
    }
    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if m > n_eq {
        cones.push(SupportedConeT::NonnegativeConeT(m - n_eq));
    }
    let s = DefaultSettings {
        verbose: false,
        max_iter: settings.max_iter,
        tol_gap_abs: settings.tol,
        tol_gap_rel: settings.tol,
        tol_feas: settings.tol,
        presolve_enable: false,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &qp.linear, &a, &b, &cones, s)
        .map_err(|e| Error::Contract(format!("qp setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;

    let z = sol.x.clone();
    let y: Vec<f64> = sol.z[..n_eq].iter().map(|v| -v).collect();
    let mut lambda = vec![0.0; qp.ineq_rows.len()];
    for (slot, &k) in ineq_map.iter().enumerate() {
        lambda[k] = sol.z[n_eq + slot];
    }
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => QpStatus::Optimal,
        SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::InsufficientProgress => {
            QpStatus::MaxIterations
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            let cert: Vec<f64> = sol.z.iter().map(|v| v.abs()).collect();
            let top = cert.iter().fold(0.0f64, |a, b| a.max(*b));
            let mut rows: Vec<usize> = cert
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 1e-6 * top)
                .map(|(i, _)| if i < n_eq { i } else { n_eq + ineq_map[i - n_eq] })
                .collect();
            rows.sort_unstable();
            QpStatus::Infeasible { rows }
        }
        other => QpStatus::Failed { reason: format!("{other:?}") },
    };
    let kkt = kkt_residuals(qp, &z, &y, &lambda);
    Ok(QpSolution { objective: qp.objective(&z), z, y, lambda, status, kkt, iterations: sol.iterations })
}
