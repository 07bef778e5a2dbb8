//! Numerical oracle for the adversary's problem.
//!
//! Minimizes `⟨R, d^π⟩` over the uncertainty set by projected gradient
//! descent with Euclidean projections onto Lp balls, then certifies the
//! result with Hölder's equality conditions: every coordinate of the
//! perturbation has the opposite sign of its coefficient, and
//! `|r_i|^p ∝ |x_i|^q`. It never calls the closed-form minimizer, so it is an
//! independent check of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::occupancy_exact;
use crate::mdp::TabularMdp;
use crate::norm::{lp_norm, NormOrder};
use crate::policy::Policy;
use crate::robust::WorstCaseReport;
use crate::table::Table;
use crate::uncertainty::{UncertaintySpec, COUPLED, NOMINAL, SA_RECT, S_RECT};

/// Largest `S * A` the oracle accepts.
pub const ORACLE_MAX_PAIRS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub step: f64,
    pub max_iters: usize,
    /// Stop once an update moves no coordinate by more than this times the radius.
    pub stationarity_tol: f64,
    /// Tolerance of the optimality certificate.
    pub certificate_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            step: 1e-2,
            max_iters: 100_000,
            stationarity_tol: 1e-15,
            certificate_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub report: WorstCaseReport,
    pub iterations: usize,
    /// Worst certificate violation over all blocks.
    pub certificate_error: f64,
    /// False when the optimality conditions fail at `certificate_tol`.
    pub certified: bool,
}

/// Minimizes the return over the uncertainty set of `spec` numerically.
pub fn brute_force_worst_reward(
    mdp: &TabularMdp,
    policy: &Policy,
    spec: &UncertaintySpec,
    config: &OracleConfig,
) -> Result<OracleOutcome> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if ns * na > ORACLE_MAX_PAIRS {
        return Err(Error::Unsupported(format!(
            "oracle is limited to S*A <= {ORACLE_MAX_PAIRS}, got {}",
            ns * na
        )));
    }
    spec.validate(ns, na)?;
    policy.check_dims(ns, na)?;
    let occupancy = occupancy_exact(mdp, policy)?;
    let d = &occupancy.state_action;

    // Each block is an independent ball: the whole table for the coupled set,
    // one state row for s-rect, one pair for sa-rect.
    let blocks: Vec<(Vec<usize>, f64)> = match spec.flavor.as_str() {
        COUPLED => vec![((0..ns * na).collect(), spec.radius)],
        S_RECT => {
            let radii = spec.state_radii.as_ref().expect("validated");
            (0..ns).map(|s| ((s * na..(s + 1) * na).collect(), radii[s])).collect()
        }
        SA_RECT => {
            let radii = spec.pair_radii.as_ref().expect("validated");
            (0..ns * na).map(|i| (vec![i], radii.as_slice()[i])).collect()
        }
        NOMINAL => Vec::new(),
        other => return Err(Error::UnknownFlavor(other.to_string())),
    };

    let inv_p = spec.p.reciprocal();
    let mut perturbation = vec![0.0; ns * na];
    let mut iterations = 0;
    let mut certificate_error: f64 = 0.0;
    for (indices, radius) in blocks {
        let scale: Vec<f64> = indices
            .iter()
            .map(|&i| spec.weights.as_ref().map_or(1.0, |w| w.as_slice()[i].powf(inv_p)))
            .collect();
        // r̂ = w^{1/p} r, x̂ = x / w^{1/p}: an unweighted ball in scaled coordinates
        let coeffs: Vec<f64> = indices.iter().zip(&scale).map(|(&i, s)| d.as_slice()[i] / s).collect();
        let (r_hat, iters) = descend(&coeffs, spec.p, radius, config);
        iterations = iterations.max(iters);
        certificate_error = certificate_error.max(holder_violation(&r_hat, &coeffs, spec.p, radius));
        for ((&i, r), s) in indices.iter().zip(&r_hat).zip(&scale) {
            perturbation[i] = r / s;
        }
    }

    let penalty = Table::from_flat(ns, na, perturbation.iter().map(|r| -r).collect())?;
    let worst_reward = mdp.reward().zip_map(&penalty, |r, p| r - p);
    let nominal_return = d.dot(mdp.reward());
    let robust_return = d.dot(&worst_reward);
    Ok(OracleOutcome {
        report: WorstCaseReport {
            regularizer_value: nominal_return - robust_return,
            penalty,
            worst_reward,
            robust_return,
            nominal_return,
            spec: spec.clone(),
        },
        iterations,
        certified: certificate_error <= config.certificate_tol,
        certificate_error,
    })
}

/// Projected gradient descent on `⟨r, x⟩` over `‖r‖_p ≤ radius`.
fn descend(x: &[f64], p: NormOrder, radius: f64, config: &OracleConfig) -> (Vec<f64>, usize) {
    let mut r = vec![0.0; x.len()];
    if radius == 0.0 {
        return (r, 0);
    }
    let threshold = config.stationarity_tol * radius;
    for it in 1..=config.max_iters {
        let step: Vec<f64> = r.iter().zip(x).map(|(r, x)| r - config.step * x).collect();
        let next = project_lp_ball(&step, p, radius);
        let moved = next.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        r = next;
        if moved <= threshold {
            return (r, it);
        }
    }
    (r, config.max_iters)
}

/// Largest violation of the Hölder equality conditions at `r` for the
/// problem `min ⟨r, x⟩, ‖r‖_p ≤ radius`, relative to the radius.
fn holder_violation(r: &[f64], x: &[f64], p: NormOrder, radius: f64) -> f64 {
    if radius == 0.0 {
        return r.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let budget = (lp_norm(r, p) - radius).abs() / radius;
    // opposite signs: r_i x_i ≤ 0
    let sign = r
        .iter()
        .zip(x)
        .map(|(r, x)| (r * x).max(0.0) / radius)
        .fold(0.0, f64::max);
    let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if x_max == 0.0 {
        return budget.max(sign);
    }
    let proportional = if p.is_infinite() {
        // q = 1: |r_i| = radius wherever x_i ≠ 0
        r.iter()
            .zip(x)
            .filter(|(_, x)| **x != 0.0)
            .map(|(r, _)| (r.abs() - radius).abs() / radius)
            .fold(0.0, f64::max)
    } else if p.is_one() {
        // q = ∞: mass only on coordinates attaining max |x_i|
        r.iter()
            .zip(x)
            .map(|(r, x)| (r.abs() / radius) * (x_max - x.abs()) / x_max)
            .fold(0.0, f64::max)
    } else {
        // |r_i|^p / ‖r‖_p^p = |x_i|^q / ‖x‖_q^q
        let pv = p.value();
        let q = p.conjugate();
        let qv = q.value();
        let r_norm = lp_norm(r, p);
        let x_norm = lp_norm(x, q);
        r.iter()
            .zip(x)
            .map(|(r, x)| ((r.abs() / r_norm).powf(pv) - (x.abs() / x_norm).powf(qv)).abs())
            .fold(0.0, f64::max)
    };
    budget.max(sign).max(proportional)
}

/// Euclidean projection onto `{y : ‖y‖_p ≤ radius}`.
pub fn project_lp_ball(z: &[f64], p: NormOrder, radius: f64) -> Vec<f64> {
    if lp_norm(z, p) <= radius {
        return z.to_vec();
    }
    if p.is_infinite() {
        return z.iter().map(|v| v.clamp(-radius, radius)).collect();
    }
    if p.value() == 2.0 {
        let n = lp_norm(z, p);
        return z.iter().map(|v| v * radius / n).collect();
    }
    if p.is_one() {
        return project_l1_ball(z, radius);
    }
    project_general(z, p.value(), radius)
}

/// Sort-based projection onto the L1 ball.
fn project_l1_ball(z: &[f64], radius: f64) -> Vec<f64> {
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumulative += m;
        let candidate = (cumulative - radius) / (k + 1) as f64;
        if m > candidate {
            theta = candidate;
        }
    }
    z.iter().map(|v| v.signum() * (v.abs() - theta).max(0.0)).collect()
}

/// General `1 < p < ∞`: the KKT conditions give `y_i = sign(z_i) t_i` with
/// `t_i + λ p t_i^{p-1} = |z_i|`; the multiplier λ is found by bisection so
/// that `Σ t_i^p = radius^p`.
fn project_general(z: &[f64], p: f64, radius: f64) -> Vec<f64> {
    let mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    let solve = |lambda: f64| -> Vec<f64> { mags.iter().map(|&m| shrink(m, lambda * p, p)).collect() };
    let order = NormOrder::new(p).expect("finite p > 1");
    let excess = |t: &[f64]| -> f64 { lp_norm(t, order) - radius };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while excess(&solve(hi)) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if excess(&solve(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = solve(hi);
    z.iter().zip(t).map(|(v, t)| v.signum() * t).collect()
}

/// Root of `t + c t^{p-1} = m` on `[0, m]` (safeguarded Newton).
fn shrink(m: f64, c: f64, p: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, m);
    let mut t = 0.5 * m;
    for _ in 0..200 {
        let ft = t + c * t.powf(p - 1.0) - m;
        if ft == 0.0 {
            return t;
        }
        if ft > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 + c * (p - 1.0) * t.powf(p - 2.0);
        let mut next = t - ft / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        // a few ulps: Newton may cycle between neighbouring doubles
        if (next - t).abs() <= 4.0 * f64::EPSILON * m || hi - lo <= 4.0 * f64::EPSILON * m {
            return next;
        }
        t = next;
    }
    t
}
