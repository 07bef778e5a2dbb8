use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

/// Tolerance on per-state probability sums.
pub const POLICY_SUM_TOL: f64 = 1e-12;

/// A stationary randomized policy: row `s` is `pi(. | s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    probs: Table,
}

impl Policy {
    pub fn new(probs: Table) -> Result<Self> {
        for (s, row) in probs.iter_rows().enumerate() {
            if let Some(a) = row.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!(
                    "pi({a} | {s}) = {} is not a probability",
                    row[a]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_SUM_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "pi(. | {s}) sums to {sum}, expected 1"
                )));
            }
        }
        if probs.cols() == 0 && probs.rows() > 0 {
            return Err(Error::InvalidPolicy("policy has no actions".into()));
        }
        Ok(Policy { probs })
    }

    /// Renormalizes rows that are off by rounding error only (e.g. after a
    /// projection), clamping tiny negatives to zero.
    pub(crate) fn from_table_renormalized(mut probs: Table) -> Self {
        for s in 0..probs.rows() {
            let row = probs.row_mut(s);
            for p in row.iter_mut() {
                *p = p.max(0.0);
            }
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
        }
        Policy { probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            probs: Table::filled(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy playing `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidPolicy(format!(
                "action {a} out of range for {num_actions} actions"
            )));
        }
        Ok(Policy {
            probs: Table::from_fn(actions.len(), num_actions, |s, a| {
                if actions[s] == a {
                    1.0
                } else {
                    0.0
                }
            }),
        })
    }

    /// Softmax policy `pi(a|s) ∝ exp(temperature * logits(s, a))`.
    pub fn softmax(logits: &Table, temperature: f64) -> Self {
        let mut probs = logits.clone();
        for s in 0..probs.rows() {
            let row = probs.row_mut(s);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(temperature * x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (temperature * *x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        Policy { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn check_dims(&self, num_states: usize, num_actions: usize) -> Result<()> {
        self.probs.check_shape(num_states, num_actions, "policy")
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            probs: Table,
        }
        let raw = Raw::deserialize(deserializer)?;
        Policy::new(raw.probs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rows() {
        let t = Table::from_rows(vec![vec![0.5, 0.4]]).unwrap();
        assert!(Policy::new(t).is_err());
        let t = Table::from_rows(vec![vec![1.5, -0.5]]).unwrap();
        assert!(Policy::new(t).is_err());
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let pi = Policy::softmax(&Table::zeros(2, 4), 1.0);
        assert_eq!(pi, Policy::uniform(2, 4));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let logits = Table::from_rows(vec![vec![1000.0, 0.0]]).unwrap();
        let pi = Policy::softmax(&logits, 1.0);
        assert_eq!(pi.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn json_shape() {
        let pi = Policy::deterministic(2, &[1, 0]).unwrap();
        let json = serde_json::to_string(&pi).unwrap();
        assert_eq!(json, r#"{"probs":[[0.0,1.0],[1.0,0.0]]}"#);
        let back: Policy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pi);
        assert!(serde_json::from_str::<Policy>(r#"{"probs":[[0.3,0.3]]}"#).is_err());
    }
}
