//! Robust policy gradients, simplex projection and the smoothness constant.
//!
//! The adversary's best response is held fixed when differentiating (the
//! envelope theorem), so the robust gradient is the ordinary policy gradient
//! evaluated under the worst-case reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{occupancy_exact, q_from_values, solve_value_exact, OccupancyMeasure, QFunction, ValueFunction};
use crate::mdp::TabularMdp;
use crate::policy::Policy;
use crate::robust::{build_set, worst_case_with_occupancy};
use crate::table::Table;
use crate::uncertainty::{RewardUncertainty, UncertaintySpec, NOMINAL, SA_RECT, S_RECT};

/// Everything a gradient step needs from one robust evaluation.
#[derive(Debug, Clone)]
pub struct RobustEvaluation {
    pub robust_return: f64,
    pub occupancy: OccupancyMeasure,
    pub worst_reward: Table,
    pub values: ValueFunction,
    pub q: QFunction,
}

impl RobustEvaluation {
    /// `d(s) Q(s,a)`, the gradient with respect to the table `π(a|s)`.
    pub fn direct_gradient(&self) -> Table {
        Table::from_fn(self.q.rows(), self.q.cols(), |s, a| self.occupancy.state[s] * self.q[(s, a)])
    }

    /// `λ d(s) π(a|s) (Q(s,a) - v(s))`, the gradient with respect to logits.
    pub fn softmax_gradient(&self, policy: &Policy, temperature: f64) -> Table {
        Table::from_fn(self.q.rows(), self.q.cols(), |s, a| {
            temperature * self.occupancy.state[s] * policy.prob(s, a) * (self.q[(s, a)] - self.values[s])
        })
    }
}

fn check_differentiable(spec: &UncertaintySpec) -> Result<()> {
    if spec.flavor != NOMINAL && spec.p.is_one() {
        return Err(Error::Unsupported(
            "the robust return is not differentiable for p = 1".into(),
        ));
    }
    if spec.p.is_infinite() && spec.flavor != NOMINAL {
        log::warn!("p = inf: the penalty does not depend on the policy, gradient equals the nominal one");
    }
    Ok(())
}

/// Robust return, occupancy, worst reward and robust values of `policy`.
pub fn robust_evaluation(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<RobustEvaluation> {
    policy.check_dims(mdp.num_states(), mdp.num_actions())?;
    let occupancy = occupancy_exact(mdp, policy)?;
    let report = worst_case_with_occupancy(mdp, policy, set, &occupancy);
    let values = solve_value_exact(mdp, policy, &report.worst_reward)?;
    let q = q_from_values(mdp, &report.worst_reward, &values);
    Ok(RobustEvaluation {
        robust_return: report.robust_return,
        occupancy,
        worst_reward: report.worst_reward,
        values,
        q,
    })
}

/// Gradient of the robust return with respect to the policy table.
pub fn robust_policy_gradient(mdp: &TabularMdp, policy: &Policy, spec: &UncertaintySpec) -> Result<Table> {
    check_differentiable(spec)?;
    let set = build_set(mdp, spec)?;
    Ok(robust_evaluation(mdp, policy, set.as_ref())?.direct_gradient())
}

/// Gradient of the robust return of `softmax(temperature · logits)` with
/// respect to the logits.
pub fn robust_policy_gradient_softmax(
    mdp: &TabularMdp,
    logits: &Table,
    spec: &UncertaintySpec,
    temperature: f64,
) -> Result<Table> {
    check_differentiable(spec)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    logits.check_shape(mdp.num_states(), mdp.num_actions(), "logits")?;
    let policy = Policy::softmax(logits, temperature);
    let set = build_set(mdp, spec)?;
    Ok(robust_evaluation(mdp, &policy, set.as_ref())?.softmax_gradient(&policy, temperature))
}

/// Euclidean projection of `x` onto the probability simplex.
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "cannot project an empty vector");
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if v > candidate {
            theta = candidate;
        }
    }
    x.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Which exponent enters the norm-smoothness term of [`smoothness_constant`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessExponent {
    /// The conjugate `q`, the order of the norm the objective actually penalizes.
    #[default]
    Conjugate,
    /// The ball order `p`.
    Primal,
}

/// Upper bound β on the Lipschitz constant of the robust policy gradient.
///
/// With `N = SA`, `L = 2γA/(1-γ)^3`, `K = A/(1-γ)^2` and exponent `e`:
/// `β = L + α (2 N^{(e+1)/e} (e-1) K^2 + N^{1/e} L)`.
pub fn smoothness_constant(mdp: &TabularMdp, spec: &UncertaintySpec) -> Result<f64> {
    smoothness_constant_with(mdp, spec, SmoothnessExponent::Conjugate)
}

pub fn smoothness_constant_with(mdp: &TabularMdp, spec: &UncertaintySpec, exponent: SmoothnessExponent) -> Result<f64> {
    if spec.p.is_one() || spec.p.is_infinite() {
        return Err(Error::Unsupported(format!(
            "smoothness constant needs 1 < p < inf, got p = {}",
            spec.p
        )));
    }
    spec.validate(mdp.num_states(), mdp.num_actions())?;
    let alpha = match spec.flavor.as_str() {
        S_RECT => spec.state_radii.iter().flatten().copied().fold(0.0, f64::max),
        SA_RECT => spec.pair_radii.as_ref().map_or(0.0, Table::max_abs),
        NOMINAL => 0.0,
        _ => spec.radius,
    };
    let e = match exponent {
        SmoothnessExponent::Conjugate => spec.p.conjugate().value(),
        SmoothnessExponent::Primal => spec.p.value(),
    };
    let a = mdp.num_actions() as f64;
    let n = mdp.num_states() as f64 * a;
    let gamma = mdp.gamma();
    let l = 2.0 * gamma * a / (1.0 - gamma).powi(3);
    let k = a / (1.0 - gamma).powi(2);
    let norm_term = 2.0 * n.powf((e + 1.0) / e) * (e - 1.0) * k * k + n.powf(1.0 / e) * l;
    Ok(l + alpha * norm_term)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.6, 0.6]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[1.5, -0.5]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[7.0]), vec![1.0]);
    }
}
