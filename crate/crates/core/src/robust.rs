//! Robust policy evaluation under reward uncertainty.
//!
//! For a fixed policy the adversary's problem is linear in the reward, so the
//! worst-case reward is the penalty table of the uncertainty set subtracted
//! from `R0`, and every robust quantity is the ordinary quantity under that
//! substituted reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    self, iterate_policy_values, occupancy_exact, policy_kernel, policy_reward, q_from_values,
    solve_value_exact, OccupancyMeasure, QFunction, ValueFunction, ValueIteration,
};
use crate::mdp::TabularMdp;
use crate::norm::minimize_over_ball;
use crate::policy::Policy;
use crate::table::Table;
use crate::uncertainty::{self, RewardUncertainty, UncertaintySpec, COUPLED};

/// The adversary's answer to a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub penalty: Table,
    pub worst_reward: Table,
    /// `⟨d, worst_reward⟩`.
    pub robust_return: f64,
    pub nominal_return: f64,
    /// Closed-form return gap (`α ‖d̂‖_q` for the coupled ball).
    pub regularizer_value: f64,
    pub spec: UncertaintySpec,
}

pub(crate) fn build_set(mdp: &TabularMdp, spec: &UncertaintySpec) -> Result<Box<dyn RewardUncertainty>> {
    uncertainty::build(spec, mdp.num_states(), mdp.num_actions())
}

fn check_policy(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    policy.check_dims(mdp.num_states(), mdp.num_actions())
}

/// Worst-case reward and robust return of `policy` against `set`.
pub fn worst_case_reward(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<WorstCaseReport> {
    check_policy(mdp, policy)?;
    let occupancy = occupancy_exact(mdp, policy)?;
    Ok(worst_case_with_occupancy(mdp, policy, set, &occupancy))
}

pub(crate) fn worst_case_with_occupancy(
    mdp: &TabularMdp,
    policy: &Policy,
    set: &dyn RewardUncertainty,
    occupancy: &OccupancyMeasure,
) -> WorstCaseReport {
    let penalty = set.penalty(policy, occupancy);
    let worst_reward = mdp.reward().zip_map(&penalty, |r, p| r - p);
    WorstCaseReport {
        robust_return: occupancy.state_action.dot(&worst_reward),
        nominal_return: occupancy.state_action.dot(mdp.reward()),
        regularizer_value: set.regularizer(policy, occupancy),
        penalty,
        worst_reward,
        spec: set.spec().clone(),
    }
}

/// [`worst_case_reward`] for a spec resolved through the built-in registry.
pub fn worst_case_reward_for(mdp: &TabularMdp, policy: &Policy, spec: &UncertaintySpec) -> Result<WorstCaseReport> {
    let set = build_set(mdp, spec)?;
    worst_case_reward(mdp, policy, set.as_ref())
}

/// Worst case over an s- or sa-rectangular set; rejects other flavors.
pub fn worst_case_reward_rectangular(
    mdp: &TabularMdp,
    policy: &Policy,
    spec: &UncertaintySpec,
) -> Result<WorstCaseReport> {
    if !spec.is_rectangular() {
        return Err(Error::InvalidSpec(format!(
            "`{}` is not a rectangular flavor",
            spec.flavor
        )));
    }
    worst_case_reward_for(mdp, policy, spec)
}

/// `ρ_{R0} - regularizer`; one occupancy solve, no penalty table.
pub fn robust_return(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<f64> {
    check_policy(mdp, policy)?;
    let occupancy = occupancy_exact(mdp, policy)?;
    Ok(occupancy.state_action.dot(mdp.reward()) - set.regularizer(policy, &occupancy))
}

/// Robust value iteration: `v ← T^π_{R0} v - Σ_a π(a|s) penalty(s, a)`.
///
/// The occupancy measure, and hence the penalty, is computed once up front;
/// the sweeps then contract at rate γ like any fixed-reward evaluation.
pub fn robust_value_iteration(
    mdp: &TabularMdp,
    policy: &Policy,
    set: &dyn RewardUncertainty,
    tol: f64,
) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    check_policy(mdp, policy)?;
    let occupancy = occupancy_exact(mdp, policy)?;
    let penalty = set.penalty(policy, &occupancy);
    let kernel = policy_kernel(mdp, policy)?;
    let nominal = policy_reward(mdp, policy, mdp.reward())?;
    let reward: Vec<f64> = nominal
        .iter()
        .enumerate()
        .map(|(s, r)| r - eval::dot(policy.row(s), penalty.row(s)))
        .collect();
    Ok(iterate_policy_values(
        &kernel,
        &reward,
        mdp.gamma(),
        tol,
        vec![0.0; mdp.num_states()],
    ))
}

/// Exact robust value function, `(I - γP^π)^{-1}` applied to the worst reward.
pub fn robust_value_exact(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<ValueFunction> {
    let report = worst_case_reward(mdp, policy, set)?;
    solve_value_exact(mdp, policy, &report.worst_reward)
}

/// Robust Q-function `Q(s,a) = R0(s,a) + γ P(s,a)·v_robust - penalty(s,a)`.
pub fn robust_q(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<QFunction> {
    let report = worst_case_reward(mdp, policy, set)?;
    let v = solve_value_exact(mdp, policy, &report.worst_reward)?;
    Ok(q_from_values(mdp, &report.worst_reward, &v))
}

/// Fixed point of the state-wise robust Bellman operator applied naively to a
/// coupled ball.
///
/// Each state's adversary may use the full radius α on its own reward block,
/// so the operator is `(Tv)(s) = T^π_{R0} v(s) - α ‖π̂_s‖_q`. This is the
/// evaluation under the smallest s-rectangular set containing the coupled
/// ball, and is never larger than the coupled robust value.
pub fn rectangularized_value(
    mdp: &TabularMdp,
    policy: &Policy,
    spec: &UncertaintySpec,
    tol: f64,
) -> Result<ValueIteration> {
    if spec.flavor != COUPLED {
        return Err(Error::InvalidSpec(format!(
            "rectangularization expects a coupled spec, got `{}`",
            spec.flavor
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    spec.validate(mdp.num_states(), mdp.num_actions())?;
    check_policy(mdp, policy)?;
    let kernel = policy_kernel(mdp, policy)?;
    let nominal = policy_reward(mdp, policy, mdp.reward())?;
    let reward: Vec<f64> = nominal
        .iter()
        .enumerate()
        .map(|(s, r)| {
            let weights = spec.weights.as_ref().map(|w| w.row(s));
            r - minimize_over_ball(policy.row(s), weights, spec.p, spec.radius).dual_value
        })
        .collect();
    Ok(iterate_policy_values(
        &kernel,
        &reward,
        mdp.gamma(),
        tol,
        vec![0.0; mdp.num_states()],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::NormOrder;

    fn one_by_one() -> TabularMdp {
        TabularMdp::new(vec![vec![vec![1.0]]], Table::filled(1, 1, 1.0), 0.9, vec![1.0]).unwrap()
    }

    #[test]
    fn single_pair_closed_form() {
        let mdp = one_by_one();
        let pi = Policy::uniform(1, 1);
        let report = worst_case_reward_for(&mdp, &pi, &UncertaintySpec::coupled(0.1, NormOrder::TWO)).unwrap();
        assert!((report.penalty[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((report.robust_return - 9.0).abs() < 1e-12);
        assert!((report.regularizer_value - 1.0).abs() < 1e-12);
        let set = build_set(&mdp, &report.spec).unwrap();
        let q = robust_q(&mdp, &pi, set.as_ref()).unwrap();
        assert!((q[(0, 0)] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_is_nominal() {
        let mdp = one_by_one();
        let pi = Policy::uniform(1, 1);
        let report = worst_case_reward_for(&mdp, &pi, &UncertaintySpec::coupled(0.0, NormOrder::TWO)).unwrap();
        assert_eq!(report.worst_reward, *mdp.reward());
        assert_eq!(report.robust_return, report.nominal_return);
    }

    #[test]
    fn rectangular_wrapper_rejects_coupled() {
        let mdp = one_by_one();
        let pi = Policy::uniform(1, 1);
        let spec = UncertaintySpec::coupled(0.1, NormOrder::TWO);
        assert!(worst_case_reward_rectangular(&mdp, &pi, &spec).is_err());
        assert!(rectangularized_value(&mdp, &pi, &UncertaintySpec::s_rect(vec![0.1], NormOrder::TWO), 1e-9).is_err());
    }

    #[test]
    fn single_state_rectangularization_changes_nothing() {
        let mdp = one_by_one();
        let pi = Policy::uniform(1, 1);
        let spec = UncertaintySpec::coupled(0.3, NormOrder::TWO);
        let rect = rectangularized_value(&mdp, &pi, &spec, 1e-12).unwrap();
        let set = build_set(&mdp, &spec).unwrap();
        let coupled = robust_value_exact(&mdp, &pi, set.as_ref()).unwrap();
        assert!((rect.values[0] - coupled[0]).abs() < 1e-10);
    }
}
