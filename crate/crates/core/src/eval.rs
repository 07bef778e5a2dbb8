//! Policy evaluation: policy kernels, Bellman operators, value functions,
//! occupancy measures and returns.
//!
//! Systems with at most [`DENSE_SOLVE_MAX_STATES`] states are solved with a
//! dense LU factorization; larger ones fall back to fixed-point iteration.

use std::cell::Cell;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::Policy;
use crate::table::Table;

pub const DENSE_SOLVE_MAX_STATES: usize = 2000;

thread_local! {
    static OCCUPANCY_SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Number of occupancy-measure computations performed on the current thread.
pub fn occupancy_solve_count() -> u64 {
    OCCUPANCY_SOLVES.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(Vec<f64>);

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        ValueFunction(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &ValueFunction) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl Deref for ValueFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QFunction(Table);

impl QFunction {
    pub fn new(q: Table) -> Self {
        QFunction(q)
    }

    pub fn into_table(self) -> Table {
        self.0
    }
}

impl Deref for QFunction {
    type Target = Table;

    fn deref(&self) -> &Table {
        &self.0
    }
}

/// Discounted visitation mass `d(s) = Σ_t γ^t Pr(s_t = s)` and
/// `d(s, a) = d(s) π(a|s)`. Total mass is `1 / (1 - γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub state: Vec<f64>,
    pub state_action: Table,
}

impl OccupancyMeasure {
    pub fn from_state_mass(state: Vec<f64>, policy: &Policy) -> Self {
        let state_action = Table::from_fn(policy.num_states(), policy.num_actions(), |s, a| {
            state[s] * policy.prob(s, a)
        });
        OccupancyMeasure {
            state,
            state_action,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.state.iter().sum()
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_policy(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    policy.check_dims(mdp.num_states(), mdp.num_actions())
}

fn check_reward(mdp: &TabularMdp, reward: &Table) -> Result<()> {
    reward.check_shape(mdp.num_states(), mdp.num_actions(), "reward")
}

/// `P^π(s' | s) = Σ_a π(a|s) P(s' | s, a)`.
pub fn policy_kernel(mdp: &TabularMdp, policy: &Policy) -> Result<DMatrix<f64>> {
    check_policy(mdp, policy)?;
    let n = mdp.num_states();
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, &p) in policy.row(s).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (next, &t) in mdp.transition(s, a).iter().enumerate() {
                kernel[(s, next)] += p * t;
            }
        }
    }
    Ok(kernel)
}

/// `R^π(s) = Σ_a π(a|s) R(s, a)`.
pub fn policy_reward(mdp: &TabularMdp, policy: &Policy, reward: &Table) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    check_reward(mdp, reward)?;
    Ok((0..mdp.num_states())
        .map(|s| policy.row(s).iter().zip(reward.row(s)).map(|(p, r)| p * r).sum())
        .collect())
}

/// One application of `T^π_R v = R^π + γ P^π v`.
pub fn bellman_policy(mdp: &TabularMdp, policy: &Policy, reward: &Table, v: &[f64]) -> Result<Vec<f64>> {
    let kernel = policy_kernel(mdp, policy)?;
    let r = policy_reward(mdp, policy, reward)?;
    Ok(apply_bellman(&kernel, &r, mdp.gamma(), v))
}

fn apply_bellman(kernel: &DMatrix<f64>, r: &[f64], gamma: f64, v: &[f64]) -> Vec<f64> {
    let pv = kernel * DVector::from_column_slice(v);
    r.iter().zip(pv.iter()).map(|(r, pv)| r + gamma * pv).collect()
}

/// `v = (I - γ P^π)^{-1} R^π`.
pub fn solve_value_exact(mdp: &TabularMdp, policy: &Policy, reward: &Table) -> Result<ValueFunction> {
    let n = mdp.num_states();
    if n > DENSE_SOLVE_MAX_STATES {
        let scale = reward.max_abs().max(1.0) / (1.0 - mdp.gamma());
        return Ok(value_iteration(mdp, policy, reward, 1e-12 * scale)?.values);
    }
    let kernel = policy_kernel(mdp, policy)?;
    let r = policy_reward(mdp, policy, reward)?;
    let system = DMatrix::identity(n, n) - kernel * mdp.gamma();
    let v = system
        .lu()
        .solve(&DVector::from_vec(r))
        .ok_or_else(|| Error::Numerical("value system (I - γP^π) is singular".into()))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("value solve produced non-finite entries".into()));
    }
    Ok(ValueFunction(v.as_slice().to_vec()))
}

/// Result of a policy-evaluation fixed-point iteration.
#[derive(Debug, Clone)]
pub struct ValueIteration {
    pub values: ValueFunction,
    /// `‖T v_k - v_k‖_∞` for every sweep performed.
    pub residuals: Vec<f64>,
}

impl ValueIteration {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }
}

/// Iterates `v ← T^π_R v` from `v = 0` until `‖T v - v‖_∞ ≤ tol (1-γ)/γ`, so
/// the returned iterate is within `tol` of the fixed point in sup-norm.
pub fn value_iteration(mdp: &TabularMdp, policy: &Policy, reward: &Table, tol: f64) -> Result<ValueIteration> {
    value_iteration_from(mdp, policy, reward, tol, vec![0.0; mdp.num_states()])
}

pub fn value_iteration_from(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &Table,
    tol: f64,
    init: Vec<f64>,
) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if init.len() != mdp.num_states() {
        return Err(Error::Dimension("initial value vector has the wrong length".into()));
    }
    let kernel = policy_kernel(mdp, policy)?;
    let r = policy_reward(mdp, policy, reward)?;
    Ok(iterate_policy_values(&kernel, &r, mdp.gamma(), tol, init))
}

/// Policy-evaluation sweeps in residual form: with `Δ_k = T v_k - v_k` we have
/// `v_{k+1} = v_k + Δ_k` and `Δ_{k+1} = γ P^π Δ_k`, which is the same iteration
/// as repeated application of `T` but keeps the residual contraction exact up
/// to relative rounding.
pub(crate) fn iterate_policy_values(
    kernel: &DMatrix<f64>,
    r: &[f64],
    gamma: f64,
    tol: f64,
    init: Vec<f64>,
) -> ValueIteration {
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    };
    let mut v = init;
    let tv = apply_bellman(kernel, r, gamma, &v);
    let mut delta = DVector::from_iterator(v.len(), tv.iter().zip(&v).map(|(t, x)| t - x));
    let mut residuals = Vec::new();
    loop {
        let res = delta.amax();
        residuals.push(res);
        for (x, d) in v.iter_mut().zip(delta.iter()) {
            *x += d;
        }
        if res <= threshold || !res.is_finite() {
            break;
        }
        delta = kernel * &delta * gamma;
    }
    ValueIteration {
        values: ValueFunction(v),
        residuals,
    }
}

/// `d^π = μ^T (I - γ P^π)^{-1}`.
pub fn occupancy_exact(mdp: &TabularMdp, policy: &Policy) -> Result<OccupancyMeasure> {
    OCCUPANCY_SOLVES.with(|c| c.set(c.get() + 1));
    let n = mdp.num_states();
    if n > DENSE_SOLVE_MAX_STATES {
        let tol = 1e-12 / (1.0 - mdp.gamma());
        let it = occupancy_iterative_uncounted(mdp, policy, usize::MAX, tol)?;
        return Ok(it.measure);
    }
    let kernel = policy_kernel(mdp, policy)?;
    let system = DMatrix::identity(n, n) - kernel.transpose() * mdp.gamma();
    let d = system
        .lu()
        .solve(&DVector::from_column_slice(mdp.mu()))
        .ok_or_else(|| Error::Numerical("occupancy system (I - γP^π)^T is singular".into()))?;
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("occupancy solve produced non-finite entries".into()));
    }
    Ok(OccupancyMeasure::from_state_mass(d.as_slice().to_vec(), policy))
}

/// Iterator over `d_{n+1} = μ + γ (P^π)^T d_n`, yielding `d_1, d_2, ...`.
pub struct OccupancyIterates {
    kernel_t: DMatrix<f64>,
    mu: DVector<f64>,
    gamma: f64,
    current: DVector<f64>,
}

impl OccupancyIterates {
    pub fn new(mdp: &TabularMdp, policy: &Policy, init: &[f64]) -> Result<Self> {
        if init.len() != mdp.num_states() {
            return Err(Error::Dimension("initial occupancy has the wrong length".into()));
        }
        Ok(OccupancyIterates {
            kernel_t: policy_kernel(mdp, policy)?.transpose(),
            mu: DVector::from_column_slice(mdp.mu()),
            gamma: mdp.gamma(),
            current: DVector::from_column_slice(init),
        })
    }
}

impl Iterator for OccupancyIterates {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        self.current = &self.mu + &self.kernel_t * &self.current * self.gamma;
        Some(self.current.as_slice().to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct OccupancyIteration {
    pub measure: OccupancyMeasure,
    pub iterations: usize,
    /// False when `max_iters` ran out before the error bound reached `tol`.
    pub converged: bool,
    /// A-posteriori bound `γ/(1-γ) ‖d_n - d_{n-1}‖_1` on the L1 error.
    pub error_bound: f64,
}

/// Iterates `d ← μ + γ (P^π)^T d` from `d_0 = μ` until the L1 error bound is
/// at most `tol` or `max_iters` updates have been made.
pub fn occupancy_iterative(
    mdp: &TabularMdp,
    policy: &Policy,
    max_iters: usize,
    tol: f64,
) -> Result<OccupancyIteration> {
    OCCUPANCY_SOLVES.with(|c| c.set(c.get() + 1));
    occupancy_iterative_uncounted(mdp, policy, max_iters, tol)
}

fn occupancy_iterative_uncounted(
    mdp: &TabularMdp,
    policy: &Policy,
    max_iters: usize,
    tol: f64,
) -> Result<OccupancyIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let gamma = mdp.gamma();
    let mut prev = mdp.mu().to_vec();
    let mut error_bound = f64::INFINITY;
    let mut iterations = 0;
    let iterates = OccupancyIterates::new(mdp, policy, mdp.mu())?;
    for d in iterates.take(max_iters) {
        iterations += 1;
        error_bound = if gamma == 0.0 {
            0.0
        } else {
            gamma / (1.0 - gamma) * l1_distance(&d, &prev)
        };
        prev = d;
        if error_bound <= tol {
            break;
        }
    }
    Ok(OccupancyIteration {
        measure: OccupancyMeasure::from_state_mass(prev, policy),
        iterations,
        converged: error_bound <= tol,
        error_bound,
    })
}

/// `ρ^π_R = ⟨μ, v^π_R⟩`.
pub fn return_of(mdp: &TabularMdp, policy: &Policy, reward: &Table) -> Result<f64> {
    let v = solve_value_exact(mdp, policy, reward)?;
    Ok(dot(mdp.mu(), &v))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Q(s, a) = R(s, a) + γ Σ_s' P(s'|s,a) v(s')`.
pub fn q_from_values(mdp: &TabularMdp, reward: &Table, v: &[f64]) -> QFunction {
    let gamma = mdp.gamma();
    QFunction(Table::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        reward[(s, a)] + gamma * dot(mdp.transition(s, a), v)
    }))
}

pub fn q_values(mdp: &TabularMdp, policy: &Policy, reward: &Table) -> Result<QFunction> {
    let v = solve_value_exact(mdp, policy, reward)?;
    Ok(q_from_values(mdp, reward, &v))
}

/// Index of the maximal entry; entries within a relative `1e-12` of the
/// maximum count as ties and the lowest index wins.
pub(crate) fn greedy_action(q: &[f64]) -> usize {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * max.abs().max(1.0);
    q.iter().position(|&x| x >= max - slack).unwrap_or(0)
}

/// Optimal-control value iteration `v ← max_π T^π_R v` with the same stopping
/// rule as [`value_iteration`]; returns the values and the greedy policy.
pub fn optimal_value_iteration(mdp: &TabularMdp, reward: &Table, tol: f64) -> Result<(ValueFunction, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    check_reward(mdp, reward)?;
    let gamma = mdp.gamma();
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    };
    let mut v = vec![0.0; mdp.num_states()];
    loop {
        let q = q_from_values(mdp, reward, &v);
        let next: Vec<f64> = q
            .iter_rows()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let res = max_abs_diff(&next, &v);
        v = next;
        if res <= threshold || !res.is_finite() {
            break;
        }
    }
    let q = q_from_values(mdp, reward, &v);
    let actions: Vec<usize> = q.iter_rows().map(greedy_action).collect();
    let policy = Policy::deterministic(mdp.num_actions(), &actions)?;
    Ok((ValueFunction(v), policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(gamma: f64, reward: f64) -> TabularMdp {
        TabularMdp::new(
            vec![vec![vec![1.0]]],
            Table::filled(1, 1, reward),
            gamma,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn geometric_series() {
        let mdp = single_state(0.9, 1.0);
        let pi = Policy::uniform(1, 1);
        let v = solve_value_exact(&mdp, &pi, mdp.reward()).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!((return_of(&mdp, &pi, mdp.reward()).unwrap() - 10.0).abs() < 1e-12);
        let d = occupancy_exact(&mdp, &pi).unwrap();
        assert!((d.state[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_zero_value() {
        let mdp = single_state(0.5, 0.0);
        let pi = Policy::uniform(1, 1);
        let vi = value_iteration(&mdp, &pi, mdp.reward(), 1e-10).unwrap();
        assert_eq!(vi.values[0], 0.0);
    }

    #[test]
    fn scalar_occupancy_recursion_is_truncated_geometric_sum() {
        let mdp = single_state(0.9, 1.0);
        let pi = Policy::uniform(1, 1);
        let iterates: Vec<_> = OccupancyIterates::new(&mdp, &pi, &[1.0]).unwrap().take(5).collect();
        for (n, d) in iterates.iter().enumerate() {
            // d_0 = μ = 1, d_n = Σ_{t ≤ n} γ^t
            let k = n as i32 + 1;
            let expected = (1.0 - 0.9f64.powi(k + 1)) / (1.0 - 0.9);
            assert!((d[0] - expected).abs() < 1e-12, "n={} got {}", n + 1, d[0]);
        }
    }

    #[test]
    fn undiscounted_single_sweep() {
        let mdp = single_state(0.0, 3.0);
        let pi = Policy::uniform(1, 1);
        let vi = value_iteration(&mdp, &pi, mdp.reward(), 1e-9).unwrap();
        assert_eq!(vi.sweeps(), 1);
        assert_eq!(vi.values[0], 3.0);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mdp = single_state(0.5, 1.0);
        let pi = Policy::uniform(2, 1);
        assert!(matches!(policy_kernel(&mdp, &pi), Err(Error::Dimension(_))));
    }

    #[test]
    fn greedy_ties_take_lowest_index() {
        assert_eq!(greedy_action(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(greedy_action(&[2.0, 2.0]), 0);
    }

    #[test]
    fn invalid_tolerance_rejected() {
        let mdp = single_state(0.5, 1.0);
        let pi = Policy::uniform(1, 1);
        assert!(value_iteration(&mdp, &pi, mdp.reward(), 0.0).is_err());
        assert!(occupancy_iterative(&mdp, &pi, 10, -1.0).is_err());
    }
}
