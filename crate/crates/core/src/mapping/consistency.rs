//! Per-object consistency belief: a Gaussian over the geometric change `l`
//! times a Beta over the consistency probability `v`, updated with
//! Gaussian-uniform geometric evidence and Bernoulli semantic evidence.
//!
//! The exact posterior is a two-component mixture (measurement explained by
//! the object, or by clutter). Its moments are computed in closed form and
//! projected back onto the Gaussian x Beta family by moment matching.

use serde::{Deserialize, Serialize};

/// Lower bound on the change standard deviation (m).
pub const SIGMA_MIN: f64 = 1.0e-3;
/// Lower bound on the Beta parameters.
pub const PARAM_FLOOR: f64 = 0.5;
/// Upper bound on the Beta parameters.
pub const PARAM_CEIL: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ConsistencyParams {
    /// Uninformative prior: no change expected, uniform consistency.
    pub fn prior(delta_max: f64) -> Self {
        Self { mu: 0.0, sigma: delta_max / 3.0, alpha: 1.0, beta: 1.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.mu.is_finite() && self.sigma > 0.0 && self.alpha > 0.0 && self.beta > 0.0
    }
}

/// Geometric measurement `delta` and binary semantic label `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    pub delta: f64,
    pub s: bool,
}

/// Mean of the Beta belief over `v`.
pub fn expected_consistency(p: &ConsistencyParams) -> f64 {
    p.alpha / (p.alpha + p.beta)
}

/// Which safeguards fired during an update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampFlags {
    pub measurement: bool,
    pub sigma: bool,
    pub beta_inversion: bool,
    pub ceiling: bool,
    pub floor: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.measurement || self.sigma || self.beta_inversion || self.ceiling || self.floor
    }
}

/// Moments of the exact (unprojected) posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorMoments {
    pub mean_l: f64,
    pub var_l: f64,
    pub mean_v: f64,
    pub mean_v2: f64,
    /// Posterior probability that the measurement is an inlier.
    pub inlier_weight: f64,
}

/// `B(a + i, b + j) / B(a, b)` for non-negative integer shifts.
fn beta_ratio(a: f64, b: f64, i: u32, j: u32) -> f64 {
    let mut num = 1.0;
    for k in 0..i {
        num *= a + k as f64;
    }
    for k in 0..j {
        num *= b + k as f64;
    }
    let mut den = 1.0;
    for k in 0..i + j {
        den *= a + b + k as f64;
    }
    num / den
}

fn beta_moments(a: f64, b: f64) -> (f64, f64) {
    let m1 = a / (a + b);
    let m2 = m1 * (a + 1.0) / (a + b + 1.0);
    (m1, m2)
}

/// Closed-form moments of the exact posterior. `m.delta` is used as given;
/// callers clamp it to `[-delta_max, delta_max]` first.
pub fn posterior_moments(p: &ConsistencyParams, m: &MeasurementPair, tau: f64, delta_max: f64) -> PosteriorMoments {
    let s = u32::from(m.s);
    let var_pred = p.sigma * p.sigma + tau * tau;
    let r = m.delta - p.mu;
    let gauss = (-0.5 * r * r / var_pred).exp() / (2.0 * std::f64::consts::PI * var_pred).sqrt();
    let uniform = 1.0 / (2.0 * delta_max);

    // inlier: v^(s+1) (1-v)^(1-s), outlier: v^s (1-v)^(2-s), both times the prior
    let w_in = gauss * beta_ratio(p.alpha, p.beta, s + 1, 1 - s);
    let w_out = uniform * beta_ratio(p.alpha, p.beta, s, 2 - s);
    let total = w_in + w_out;
    let (pi_in, pi_out) = if total > 0.0 { (w_in / total, w_out / total) } else { (0.0, 1.0) };

    let var_in = 1.0 / (1.0 / (p.sigma * p.sigma) + 1.0 / (tau * tau));
    let mu_in = var_in * (p.mu / (p.sigma * p.sigma) + m.delta / (tau * tau));
    let el = pi_in * mu_in + pi_out * p.mu;
    let el2 = pi_in * (var_in + mu_in * mu_in) + pi_out * (p.sigma * p.sigma + p.mu * p.mu);

    let (in1, in2) = beta_moments(p.alpha + (s + 1) as f64, p.beta + (1 - s) as f64);
    let (out1, out2) = beta_moments(p.alpha + s as f64, p.beta + (2 - s) as f64);
    PosteriorMoments {
        mean_l: el,
        var_l: (el2 - el * el).max(0.0),
        mean_v: pi_in * in1 + pi_out * out1,
        mean_v2: pi_in * in2 + pi_out * out2,
        inlier_weight: pi_in,
    }
}

/// One Bayesian update followed by moment-matching projection and the
/// parameter safeguards.
pub fn bayes_update(
    p: &ConsistencyParams,
    m: &MeasurementPair,
    tau: f64,
    delta_max: f64,
) -> (ConsistencyParams, ClampFlags) {
    let mut flags = ClampFlags::default();
    let mut m = *m;
    if m.delta.abs() > delta_max || !m.delta.is_finite() {
        flags.measurement = true;
        m.delta = if m.delta.is_nan() { delta_max } else { m.delta.clamp(-delta_max, delta_max) };
    }
    let mom = posterior_moments(p, &m, tau, delta_max);

    let mut sigma = mom.var_l.sqrt();
    if !(sigma >= SIGMA_MIN) {
        sigma = SIGMA_MIN;
        flags.sigma = true;
    } else if sigma > delta_max {
        sigma = delta_max;
        flags.sigma = true;
    }

    let m1 = mom.mean_v;
    let var_v = mom.mean_v2 - m1 * m1;
    let (mut alpha, mut beta) = if var_v > 0.0 && mom.mean_v2 < m1 {
        let c = m1 * (1.0 - m1) / var_v - 1.0;
        (m1 * c, (1.0 - m1) * c)
    } else {
        // degenerate spread: most concentrated belief with the same mean
        flags.beta_inversion = true;
        let m1 = m1.clamp(1e-6, 1.0 - 1e-6);
        (m1 * 2.0 * PARAM_CEIL, (1.0 - m1) * 2.0 * PARAM_CEIL)
    };
    let top = alpha.max(beta);
    if top > PARAM_CEIL {
        // shrink the concentration, keep the mean
        alpha *= PARAM_CEIL / top;
        beta *= PARAM_CEIL / top;
        flags.ceiling = true;
    }
    if alpha < PARAM_FLOOR || beta < PARAM_FLOOR {
        alpha = alpha.max(PARAM_FLOOR);
        beta = beta.max(PARAM_FLOOR);
        flags.floor = true;
    }
    (ConsistencyParams { mu: mom.mean_l, sigma, alpha, beta }, flags)
}
