//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use htmpc_core::mapping::{ConsistencyParams, MeasurementPair};
use htmpc_core::mpc::{QpProblem, RowKind, RowTag, SparseRow};
use nalgebra::{DMatrix, DVector};
use rand::Rng;


pub struct Quadrature {
    pub mean_l: f64,
    pub var_l: f64,
    pub mean_v: f64,
    pub mean_v2: f64,
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Prior x likelihood integrated on a 2001 x 2001 trapezoid grid. The
/// integrand is a sum of two separable terms, so the 2-D rule factors into
/// products of 1-D rules evaluated on the same nodes.
pub fn quadrature(p: &ConsistencyParams, m: &MeasurementPair, tau: f64, delta_max: f64) -> Quadrature {
    let n = 2001;
    let ls: Vec<f64> = (0..n).map(|i| -delta_max + 2.0 * delta_max * i as f64 / (n - 1) as f64).collect();
    let vs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let gauss = |x: f64, mu: f64, sd: f64| (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let uniform = 1.0 / (2.0 * delta_max);
    let s = if m.s { 1.0 } else { 0.0 };

    let prior_l: Vec<f64> = ls.iter().map(|&l| gauss(l, p.mu, p.sigma)).collect();
    let like_l: Vec<f64> = ls.iter().zip(&prior_l).map(|(&l, q)| q * gauss(m.delta, l, tau)).collect();
    let beta_kernel = |v: f64| v.powf(p.alpha - 1.0) * (1.0 - v).powf(p.beta - 1.0) * v.powf(s) * (1.0 - v).powf(1.0 - s);
    let g_in: Vec<f64> = vs.iter().map(|&v| beta_kernel(v) * v).collect();
    let g_out: Vec<f64> = vs.iter().map(|&v| beta_kernel(v) * (1.0 - v) * uniform).collect();

    let moment_l = |f: &[f64], k: i32| trapezoid(&ls, &ls.iter().zip(f).map(|(l, y)| l.powi(k) * y).collect::<Vec<_>>());
    let moment_v = |g: &[f64], k: i32| trapezoid(&vs, &vs.iter().zip(g).map(|(v, y)| v.powi(k) * y).collect::<Vec<_>>());

    let z = moment_l(&like_l, 0) * moment_v(&g_in, 0) + moment_l(&prior_l, 0) * moment_v(&g_out, 0);
    let el = (moment_l(&like_l, 1) * moment_v(&g_in, 0) + moment_l(&prior_l, 1) * moment_v(&g_out, 0)) / z;
    let el2 = (moment_l(&like_l, 2) * moment_v(&g_in, 0) + moment_l(&prior_l, 2) * moment_v(&g_out, 0)) / z;
    let ev = (moment_l(&like_l, 0) * moment_v(&g_in, 1) + moment_l(&prior_l, 0) * moment_v(&g_out, 1)) / z;
    let ev2 = (moment_l(&like_l, 0) * moment_v(&g_in, 2) + moment_l(&prior_l, 0) * moment_v(&g_out, 2)) / z;
    Quadrature { mean_l: el, var_l: el2 - el * el, mean_v: ev, mean_v2: ev2 }
}

pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}


// ------------------------------------------------------------- dense QP

/// Dense convex QP: min 1/2 z'Pz + c'z  s.t. A z = b, G z >= g.
#[derive(Clone, Debug)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl DenseQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.c.dot(z)
    }
}

/// Primal active-set method started from a feasible point. Each iteration
/// solves the equality-constrained subproblem on the working set through
/// a dense LU of its KKT matrix.
pub fn active_set_solve(qp: &DenseQp, z0: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
    let n = qp.c.len();
    let m_eq = qp.a.nrows();
    let mut z = z0.clone();
    let mut work: Vec<usize> = (0..qp.g_mat.nrows())
        .filter(|&i| (qp.g_mat.row(i).dot(&z.transpose()) - qp.g[i]).abs() < 1e-12)
        .collect();
    for _ in 0..500 {
        let k = m_eq + work.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        for r in 0..m_eq {
            for j in 0..n {
                kkt[(n + r, j)] = qp.a[(r, j)];
                kkt[(j, n + r)] = -qp.a[(r, j)];
            }
        }
        for (w, &i) in work.iter().enumerate() {
            for j in 0..n {
                kkt[(n + m_eq + w, j)] = qp.g_mat[(i, j)];
                kkt[(j, n + m_eq + w)] = -qp.g_mat[(i, j)];
            }
        }
        let mut rhs = DVector::zeros(n + k);
        let grad = &qp.p * &z + &qp.c;
        rhs.rows_mut(0, n).copy_from(&(-grad));
        let sol = kkt.lu().solve(&rhs).expect("working set KKT matrix is nonsingular");
        let step = sol.rows(0, n).into_owned();
        if step.amax() < 1e-12 {
            let lambdas = sol.rows(n + m_eq, work.len()).into_owned();
            match lambdas.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
                Some((w, &lam)) if lam < -1e-10 => {
                    work.remove(w);
                }
                _ => {
                    work.sort_unstable();
                    return (z, work);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..qp.g_mat.nrows() {
            if work.contains(&i) {
                continue;
            }
            let gp = qp.g_mat.row(i).dot(&step.transpose());
            if gp < -1e-14 {
                let slack = qp.g_mat.row(i).dot(&z.transpose()) - qp.g[i];
                let a = (slack / -gp).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(i);
                }
            }
        }
        z += step * alpha;
        if let Some(i) = blocking {
            work.push(i);
        }
    }
    panic!("active-set oracle did not converge");
}

// --------------------------------------------------- finite differences

/// Central difference of a scalar function of a vector.
pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Relative error of a vector against a reference, with an absolute floor.
pub fn vec_rel_err(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

/// Random strictly convex QP with a known strictly feasible point.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m_eq: usize, m_in: usize) -> (DenseQp, DVector<f64>) {
    let mut gauss = |r: usize, c: usize| DMatrix::<f64>::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let m = gauss(n, n);
    let p = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let c = gauss(n, 1).column(0).into_owned() * 3.0;
    let a = gauss(m_eq, n);
    let g_mat = gauss(m_in, n);
    let z0 = gauss(n, 1).column(0).into_owned();
    let b = &a * &z0;
    let margins = gauss(m_in, 1).column(0).map(|v: f64| 0.05 + v.abs());
    let g = &g_mat * &z0 - margins;
    (DenseQp { p, c, a, b, g_mat, g }, z0)
}

pub fn to_sparse(d: &DenseQp) -> QpProblem {
    let n = d.c.len();
    let mut qp = QpProblem::new(n);
    for i in 0..n {
        for j in i..n {
            qp.add_hessian(i, j, d.p[(i, j)]);
        }
    }
    qp.linear = d.c.iter().copied().collect();
    let tag = RowTag { kind: RowKind::Other, stage: 0 };
    for r in 0..d.a.nrows() {
        let mut row = SparseRow::new();
        for j in 0..n {
            row.push(j, d.a[(r, j)]);
        }
        qp.add_eq(row, d.b[r], tag);
    }
    for r in 0..d.g_mat.nrows() {
        let mut row = SparseRow::new();
        for j in 0..n {
            row.push(j, d.g_mat[(r, j)]);
        }
        qp.add_ineq(row, d.g[r], tag);
    }
    qp
}
