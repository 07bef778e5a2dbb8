//! Reward uncertainty sets.
//!
//! Every flavor of uncertainty set implements [`RewardUncertainty`]: given a
//! policy and its occupancy measure it produces the adversary's penalty table
//! (the worst-case reward is `R0 - penalty`) and the induced return
//! regularizer. Flavors are looked up by name in an [`UncertaintyRegistry`];
//! the built-in registry knows `coupled`, `s-rect`, `sa-rect` and `nominal`.

mod coupled;
mod rectangular;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use coupled::Coupled;
pub use rectangular::{PairRectangular, StateRectangular};

use crate::error::{Error, Result};
use crate::eval::OccupancyMeasure;
use crate::norm::NormOrder;
use crate::policy::Policy;
use crate::table::Table;

pub const COUPLED: &str = "coupled";
pub const S_RECT: &str = "s-rect";
pub const SA_RECT: &str = "sa-rect";
pub const NOMINAL: &str = "nominal";

/// Parameters of an Lp-ball reward uncertainty set around `R0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Registry key of the set's flavor.
    pub flavor: String,
    /// Ball radius α of the coupled set.
    #[serde(default)]
    pub radius: f64,
    pub p: NormOrder,
    /// Positive weights of a weighted Lp norm, indexed `[s][a]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Table>,
    /// Per-state radii α_s (s-rectangular only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_radii: Option<Vec<f64>>,
    /// Per-pair radii α_(s,a) (sa-rectangular only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_radii: Option<Table>,
}

impl UncertaintySpec {
    pub fn coupled(radius: f64, p: NormOrder) -> Self {
        UncertaintySpec {
            flavor: COUPLED.into(),
            radius,
            p,
            weights: None,
            state_radii: None,
            pair_radii: None,
        }
    }

    pub fn s_rect(state_radii: Vec<f64>, p: NormOrder) -> Self {
        UncertaintySpec {
            flavor: S_RECT.into(),
            radius: 0.0,
            p,
            weights: None,
            state_radii: Some(state_radii),
            pair_radii: None,
        }
    }

    pub fn sa_rect(pair_radii: Table, p: NormOrder) -> Self {
        UncertaintySpec {
            flavor: SA_RECT.into(),
            radius: 0.0,
            p,
            weights: None,
            state_radii: None,
            pair_radii: Some(pair_radii),
        }
    }

    pub fn nominal() -> Self {
        UncertaintySpec {
            flavor: NOMINAL.into(),
            radius: 0.0,
            p: NormOrder::TWO,
            weights: None,
            state_radii: None,
            pair_radii: None,
        }
    }

    /// Spec of `flavor` with the same radius `alpha` at every state or pair.
    pub fn uniform(flavor: &str, alpha: f64, p: NormOrder, num_states: usize, num_actions: usize) -> Self {
        match flavor {
            S_RECT => Self::s_rect(vec![alpha; num_states], p),
            SA_RECT => Self::sa_rect(Table::filled(num_states, num_actions, alpha), p),
            _ => UncertaintySpec {
                flavor: flavor.into(),
                ..Self::coupled(alpha, p)
            },
        }
    }

    pub fn with_weights(mut self, weights: Table) -> Self {
        self.weights = Some(weights);
        self
    }

    /// The Hölder conjugate `q` of the norm order.
    pub fn conjugate(&self) -> NormOrder {
        self.p.conjugate()
    }

    pub fn is_rectangular(&self) -> bool {
        self.flavor == S_RECT || self.flavor == SA_RECT
    }

    /// Checks the invariants that do not depend on the flavor's builder.
    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "radius α = {} must be finite and non-negative",
                self.radius
            )));
        }
        if let Some(w) = &self.weights {
            w.check_shape(num_states, num_actions, "weights")?;
            if let Some(bad) = w.as_slice().iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "weights must be strictly positive, found {bad}"
                )));
            }
        }
        let rectangular_radii = |name: &str, values: &[f64]| -> Result<()> {
            if let Some(bad) = values.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must be non-negative, found {bad}")));
            }
            Ok(())
        };
        match (self.flavor.as_str(), &self.state_radii, &self.pair_radii) {
            (S_RECT, Some(r), None) => {
                if r.len() != num_states {
                    return Err(Error::Dimension(format!(
                        "state_radii has {} entries, expected {num_states}",
                        r.len()
                    )));
                }
                rectangular_radii("state_radii", r)
            }
            (S_RECT, None, _) => Err(Error::InvalidSpec("s-rect flavor requires state_radii".into())),
            (SA_RECT, None, Some(r)) => {
                r.check_shape(num_states, num_actions, "pair_radii")?;
                rectangular_radii("pair_radii", r.as_slice())
            }
            (SA_RECT, _, None) => Err(Error::InvalidSpec("sa-rect flavor requires pair_radii".into())),
            (flavor, s, sa) if s.is_some() || sa.is_some() => Err(Error::InvalidSpec(format!(
                "rectangular radii given for the `{flavor}` flavor"
            ))),
            _ => Ok(()),
        }
    }
}

/// A reward uncertainty set seen through its adversary.
pub trait RewardUncertainty: fmt::Debug + Send + Sync {
    fn spec(&self) -> &UncertaintySpec;

    fn name(&self) -> &str {
        &self.spec().flavor
    }

    /// Penalty table `R0 - R*` of the worst-case reward `R*` against `policy`.
    fn penalty(&self, policy: &Policy, occupancy: &OccupancyMeasure) -> Table;

    /// Return gap `ρ_{R0} - ρ_robust`, i.e. `⟨d, penalty⟩` in closed form.
    fn regularizer(&self, policy: &Policy, occupancy: &OccupancyMeasure) -> f64;

    /// Whether the robust return is differentiable in the policy.
    fn is_differentiable(&self) -> bool;
}

/// The singleton set `{R0}`.
#[derive(Debug, Clone)]
pub struct Nominal {
    spec: UncertaintySpec,
}

impl RewardUncertainty for Nominal {
    fn spec(&self) -> &UncertaintySpec {
        &self.spec
    }

    fn penalty(&self, policy: &Policy, _occupancy: &OccupancyMeasure) -> Table {
        Table::zeros(policy.num_states(), policy.num_actions())
    }

    fn regularizer(&self, _policy: &Policy, _occupancy: &OccupancyMeasure) -> f64 {
        0.0
    }

    fn is_differentiable(&self) -> bool {
        true
    }
}

pub type Builder = fn(&UncertaintySpec) -> Result<Box<dyn RewardUncertainty>>;

/// Name-keyed constructors for uncertainty sets.
#[derive(Clone, Default)]
pub struct UncertaintyRegistry {
    builders: BTreeMap<String, Builder>,
}

impl fmt::Debug for UncertaintyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.builders.keys()).finish()
    }
}

impl UncertaintyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        registry.register(COUPLED, |spec| Ok(Box::new(Coupled::new(spec.clone()))));
        registry.register(S_RECT, |spec| Ok(Box::new(StateRectangular::new(spec.clone())?)));
        registry.register(SA_RECT, |spec| Ok(Box::new(PairRectangular::new(spec.clone())?)));
        registry.register(NOMINAL, |spec| Ok(Box::new(Nominal { spec: spec.clone() })));
        registry
    }

    /// Registers `builder` under `name`, returning any builder it replaces.
    pub fn register(&mut self, name: &str, builder: Builder) -> Option<Builder> {
        self.builders.insert(name.to_string(), builder)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    /// Validates `spec` against the problem dimensions and builds its set.
    pub fn build(
        &self,
        spec: &UncertaintySpec,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Box<dyn RewardUncertainty>> {
        let builder = self
            .builders
            .get(&spec.flavor)
            .ok_or_else(|| Error::UnknownFlavor(spec.flavor.clone()))?;
        spec.validate(num_states, num_actions)?;
        builder(spec)
    }
}

/// The process-wide registry of built-in flavors.
pub fn registry() -> &'static UncertaintyRegistry {
    static REGISTRY: OnceLock<UncertaintyRegistry> = OnceLock::new();
    REGISTRY.get_or_init(UncertaintyRegistry::with_builtins)
}

/// Builds `spec` from the built-in registry.
pub fn build(spec: &UncertaintySpec, num_states: usize, num_actions: usize) -> Result<Box<dyn RewardUncertainty>> {
    registry().build(spec, num_states, num_actions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_registered() {
        let names: Vec<_> = registry().names().collect();
        assert_eq!(names, vec![COUPLED, NOMINAL, S_RECT, SA_RECT]);
    }

    #[test]
    fn unknown_flavor() {
        let spec = UncertaintySpec {
            flavor: "wasserstein".into(),
            ..UncertaintySpec::coupled(0.1, NormOrder::TWO)
        };
        assert!(matches!(build(&spec, 2, 2), Err(Error::UnknownFlavor(_))));
    }

    #[test]
    fn custom_flavor_can_be_registered() {
        let mut reg = UncertaintyRegistry::with_builtins();
        reg.register("frozen", |spec| Ok(Box::new(Nominal { spec: spec.clone() })));
        let spec = UncertaintySpec {
            flavor: "frozen".into(),
            ..UncertaintySpec::nominal()
        };
        assert_eq!(reg.build(&spec, 1, 1).unwrap().name(), "frozen");
    }

    #[test]
    fn spec_validation() {
        assert!(UncertaintySpec::coupled(-0.1, NormOrder::TWO).validate(2, 2).is_err());
        let w = Table::from_rows(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(UncertaintySpec::coupled(0.1, NormOrder::TWO)
            .with_weights(w)
            .validate(2, 2)
            .is_err());
        let mut s = UncertaintySpec::s_rect(vec![0.1, 0.2], NormOrder::TWO);
        assert!(s.validate(2, 2).is_ok());
        assert!(s.validate(3, 2).is_err());
        s.state_radii = None;
        assert!(matches!(s.validate(2, 2), Err(Error::InvalidSpec(_))));
        let mut c = UncertaintySpec::coupled(0.1, NormOrder::TWO);
        c.state_radii = Some(vec![0.1, 0.1]);
        assert!(c.validate(2, 2).is_err());
        let sa = UncertaintySpec::sa_rect(Table::filled(2, 3, 0.5), NormOrder::ONE);
        assert!(sa.validate(2, 3).is_ok());
    }

    #[test]
    fn spec_json_uses_flavor_names() {
        let spec = UncertaintySpec::uniform(S_RECT, 0.3, NormOrder::INFINITY, 2, 2);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"flavor\":\"s-rect\""));
        assert!(json.contains("\"p\":\"inf\""));
        let back: UncertaintySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
