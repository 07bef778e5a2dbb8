use super::{RewardUncertainty, UncertaintySpec};
use crate::error::{Error, Result};
use crate::eval::OccupancyMeasure;
use crate::norm::minimize_over_ball;
use crate::policy::Policy;
use crate::table::Table;

/// s-rectangular balls: an independent `‖R_s - R0_s‖_{w,p} ≤ α_s` per state.
///
/// Within state `s` the adversary minimizes `⟨R_s, π_s⟩`, so
/// `penalty(s,a) = α_s (π̂_s(a) / ‖π̂_s‖_q)^{q-1} / w^{1/p}` and the return gap is
/// `Σ_s d(s) α_s ‖π̂_s‖_q`.
#[derive(Debug, Clone)]
pub struct StateRectangular {
    spec: UncertaintySpec,
    radii: Vec<f64>,
}

impl StateRectangular {
    pub fn new(spec: UncertaintySpec) -> Result<Self> {
        let radii = spec
            .state_radii
            .clone()
            .ok_or_else(|| Error::InvalidSpec("s-rect flavor requires state_radii".into()))?;
        Ok(StateRectangular { spec, radii })
    }

    fn weight_row(&self, s: usize) -> Option<&[f64]> {
        self.spec.weights.as_ref().map(|w| w.row(s))
    }
}

impl RewardUncertainty for StateRectangular {
    fn spec(&self) -> &UncertaintySpec {
        &self.spec
    }

    fn penalty(&self, policy: &Policy, _occupancy: &OccupancyMeasure) -> Table {
        let mut penalty = Table::zeros(policy.num_states(), policy.num_actions());
        for s in 0..policy.num_states() {
            let m = minimize_over_ball(policy.row(s), self.weight_row(s), self.spec.p, self.radii[s]);
            penalty.row_mut(s).copy_from_slice(&m.penalty);
        }
        penalty
    }

    fn regularizer(&self, policy: &Policy, occupancy: &OccupancyMeasure) -> f64 {
        (0..policy.num_states())
            .map(|s| {
                let m = minimize_over_ball(policy.row(s), self.weight_row(s), self.spec.p, self.radii[s]);
                occupancy.state[s] * m.dual_value
            })
            .sum()
    }

    fn is_differentiable(&self) -> bool {
        !self.spec.p.is_one() || self.radii.iter().all(|&r| r == 0.0)
    }
}

/// sa-rectangular intervals `|R(s,a) - R0(s,a)| w(s,a)^{1/p} ≤ α_(s,a)`; the
/// adversary always takes the full radius.
#[derive(Debug, Clone)]
pub struct PairRectangular {
    spec: UncertaintySpec,
    penalty: Table,
}

impl PairRectangular {
    pub fn new(spec: UncertaintySpec) -> Result<Self> {
        let radii = spec
            .pair_radii
            .clone()
            .ok_or_else(|| Error::InvalidSpec("sa-rect flavor requires pair_radii".into()))?;
        let inv_p = spec.p.reciprocal();
        let penalty = match &spec.weights {
            Some(w) => radii.zip_map(w, |r, w| r / w.powf(inv_p)),
            None => radii,
        };
        Ok(PairRectangular { spec, penalty })
    }
}

impl RewardUncertainty for PairRectangular {
    fn spec(&self) -> &UncertaintySpec {
        &self.spec
    }

    fn penalty(&self, _policy: &Policy, _occupancy: &OccupancyMeasure) -> Table {
        self.penalty.clone()
    }

    fn regularizer(&self, _policy: &Policy, occupancy: &OccupancyMeasure) -> f64 {
        occupancy.state_action.dot(&self.penalty)
    }

    fn is_differentiable(&self) -> bool {
        true
    }
}
