use super::{RewardUncertainty, UncertaintySpec};
use crate::eval::OccupancyMeasure;
use crate::norm::minimize_over_ball;
use crate::policy::Policy;
use crate::table::Table;

/// The non-rectangular ball `{R : ‖R - R0‖_{w,p} ≤ α}` over the whole
/// state-action table.
///
/// The adversary concentrates its budget where the policy's occupancy is
/// large: `penalty(s,a) = α (d̂(s,a) / ‖d̂‖_q)^{q-1} / w(s,a)^{1/p}` with
/// `d̂ = d / w^{1/p}`, and the return drops by `α ‖d̂‖_q`.
#[derive(Debug, Clone)]
pub struct Coupled {
    spec: UncertaintySpec,
}

impl Coupled {
    pub fn new(spec: UncertaintySpec) -> Self {
        Coupled { spec }
    }

    fn weights(&self) -> Option<&[f64]> {
        self.spec.weights.as_ref().map(Table::as_slice)
    }
}

impl RewardUncertainty for Coupled {
    fn spec(&self) -> &UncertaintySpec {
        &self.spec
    }

    fn penalty(&self, policy: &Policy, occupancy: &OccupancyMeasure) -> Table {
        let d = occupancy.state_action.as_slice();
        let m = minimize_over_ball(d, self.weights(), self.spec.p, self.spec.radius);
        Table::from_flat(policy.num_states(), policy.num_actions(), m.penalty)
            .expect("occupancy and policy shapes agree")
    }

    fn regularizer(&self, _policy: &Policy, occupancy: &OccupancyMeasure) -> f64 {
        let d = occupancy.state_action.as_slice();
        minimize_over_ball(d, self.weights(), self.spec.p, self.spec.radius).dual_value
    }

    fn is_differentiable(&self) -> bool {
        !self.spec.p.is_one() || self.spec.radius == 0.0
    }
}
