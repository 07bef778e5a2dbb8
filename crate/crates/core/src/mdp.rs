//! Finite discounted MDPs `(S, A, P, R0, gamma, mu)` and their JSON file format.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

/// Tolerance on probability-vector sums (kernel rows, `mu`).
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// A tabular MDP with a nominal reward `R0`.
///
/// The kernel is stored flat as `P[(s * A + a) * S + s']`. Instances built with
/// [`TabularMdp::new`] always satisfy the invariants checked by
/// [`validate_mdp`]; [`TabularMdp::new_unchecked`] exists so that malformed
/// inputs can be represented and reported on.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    mu: Vec<f64>,
    kernel: Vec<f64>,
    reward: Table,
}

impl TabularMdp {
    /// Builds and validates an MDP. `kernel[s][a][s']` is `P(s' | s, a)`.
    pub fn new(kernel: Vec<Vec<Vec<f64>>>, reward: Table, gamma: f64, mu: Vec<f64>) -> Result<Self> {
        let mdp = Self::from_nested(kernel, reward, gamma, mu)?;
        let report = validate_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report))
        }
    }

    /// Builds an MDP from a flat kernel without checking the probability
    /// invariants. Shapes must still be consistent.
    pub fn new_unchecked(
        num_states: usize,
        num_actions: usize,
        kernel: Vec<f64>,
        reward: Table,
        gamma: f64,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if kernel.len() != num_states * num_actions * num_states {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected S*A*S = {}",
                kernel.len(),
                num_states * num_actions * num_states
            )));
        }
        reward.check_shape(num_states, num_actions, "reward")?;
        if mu.len() != num_states {
            return Err(Error::Dimension(format!(
                "mu has {} entries, expected {num_states}",
                mu.len()
            )));
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            gamma,
            mu,
            kernel,
            reward,
        })
    }

    fn from_nested(kernel: Vec<Vec<Vec<f64>>>, reward: Table, gamma: f64, mu: Vec<f64>) -> Result<Self> {
        let s = kernel.len();
        let a = kernel.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(s * a * s);
        for (si, rows) in kernel.into_iter().enumerate() {
            if rows.len() != a {
                return Err(Error::Dimension(format!(
                    "P[{si}] has {} actions, expected {a}",
                    rows.len()
                )));
            }
            for (ai, row) in rows.into_iter().enumerate() {
                if row.len() != s {
                    return Err(Error::Dimension(format!(
                        "P[{si}][{ai}] has {} next states, expected {s}",
                        row.len()
                    )));
                }
                flat.extend(row);
            }
        }
        Self::new_unchecked(s, a, flat, reward, gamma, mu)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn reward(&self) -> &Table {
        &self.reward
    }

    /// `P(. | s, a)`
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.kernel[start..start + self.num_states]
    }

    pub fn kernel_flat(&self) -> &[f64] {
        &self.kernel
    }

    /// Same dynamics with a different nominal reward.
    pub fn with_reward(&self, reward: Table) -> Result<Self> {
        reward.check_shape(self.num_states, self.num_actions, "reward")?;
        Ok(TabularMdp {
            reward,
            ..self.clone()
        })
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            mu: self.mu.clone(),
            kernel: (0..self.num_states)
                .map(|s| {
                    (0..self.num_actions)
                        .map(|a| self.transition(s, a).to_vec())
                        .collect()
                })
                .collect(),
            reward: self.reward.clone(),
        }
    }
}

/// On-disk representation: `{num_states, num_actions, gamma, mu, P, R0}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub mu: Vec<f64>,
    #[serde(rename = "P")]
    pub kernel: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R0")]
    pub reward: Table,
}

impl MdpFile {
    /// Converts to an MDP, reporting every violated invariant.
    pub fn into_mdp(self) -> Result<TabularMdp> {
        let mut report = ValidationReport::default();
        if self.kernel.len() != self.num_states {
            report.push(Violation::Shape {
                what: "P".into(),
                detail: format!("{} states, header says {}", self.kernel.len(), self.num_states),
            });
        }
        if self.reward.shape() != (self.num_states, self.num_actions) && self.num_states > 0 {
            report.push(Violation::Shape {
                what: "R0".into(),
                detail: format!(
                    "{}x{}, header says {}x{}",
                    self.reward.rows(),
                    self.reward.cols(),
                    self.num_states,
                    self.num_actions
                ),
            });
        }
        if let Some(a) = self.kernel.first().map(Vec::len) {
            if a != self.num_actions {
                report.push(Violation::Shape {
                    what: "P".into(),
                    detail: format!("{a} actions, header says {}", self.num_actions),
                });
            }
        }
        if !report.is_valid() {
            return Err(Error::InvalidMdp(report));
        }
        let mdp = TabularMdp::from_nested(self.kernel, self.reward, self.gamma, self.mu).map_err(|e| {
            let mut report = ValidationReport::default();
            report.push(Violation::Shape {
                what: "MDP".into(),
                detail: e.to_string(),
            });
            Error::InvalidMdp(report)
        })?;
        let report = validate_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report))
        }
    }
}

impl Serialize for TabularMdp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularMdp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        MdpFile::deserialize(deserializer)?
            .into_mdp()
            .map_err(serde::de::Error::custom)
    }
}

/// Reads and validates an MDP file.
pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading MDP file {}", path.display()), e))?;
    let file: MdpFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_mdp()
}

pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(mdp).expect("MDP serialization is infallible");
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace { states: usize, actions: usize },
    Shape { what: String, detail: String },
    NonFinite { what: &'static str, location: String },
    NegativeTransition { state: usize, action: usize, next: usize, value: f64 },
    KernelRowSum { state: usize, action: usize, sum: f64 },
    InitialSum { sum: f64 },
    InitialNotPositive { state: usize, value: f64 },
    Discount { gamma: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { states, actions } => {
                write!(f, "empty state or action space (S={states}, A={actions})")
            }
            Violation::Shape { what, detail } => write!(f, "{what}: bad shape ({detail})"),
            Violation::NonFinite { what, location } => write!(f, "{what}{location} is not finite"),
            Violation::NegativeTransition {
                state,
                action,
                next,
                value,
            } => write!(f, "P({next} | {state}, {action}) = {value} is negative"),
            Violation::KernelRowSum { state, action, sum } => {
                write!(f, "P(. | {state}, {action}) sums to {sum}, expected 1")
            }
            Violation::InitialSum { sum } => write!(f, "mu sums to {sum}, expected 1"),
            Violation::InitialNotPositive { state, value } => {
                write!(f, "mu[{state}] = {value} must be strictly positive")
            }
            Violation::Discount { gamma } => write!(f, "gamma = {gamma} must lie in [0, 1)"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of `mdp` and lists each violation.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if ns == 0 || na == 0 {
        report.push(Violation::EmptySpace {
            states: ns,
            actions: na,
        });
        return report;
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        report.push(Violation::Discount { gamma: mdp.gamma });
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.transition(s, a);
            let mut finite = true;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    finite = false;
                    report.push(Violation::NonFinite {
                        what: "P",
                        location: format!("[{s}][{a}][{next}]"),
                    });
                } else if p < 0.0 {
                    report.push(Violation::NegativeTransition {
                        state: s,
                        action: a,
                        next,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if finite && (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
                report.push(Violation::KernelRowSum {
                    state: s,
                    action: a,
                    sum,
                });
            }
            if !mdp.reward[(s, a)].is_finite() {
                report.push(Violation::NonFinite {
                    what: "R0",
                    location: format!("[{s}][{a}]"),
                });
            }
        }
    }
    let sum: f64 = mdp.mu.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL || !sum.is_finite() {
        report.push(Violation::InitialSum { sum });
    }
    for (s, &m) in mdp.mu.iter().enumerate() {
        if !(m > 0.0) {
            report.push(Violation::InitialNotPositive { state: s, value: m });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> (Vec<Vec<Vec<f64>>>, Table) {
        let kernel = vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ];
        let reward = Table::from_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        (kernel, reward)
    }

    #[test]
    fn well_formed_passes() {
        let (k, r) = two_by_two();
        let mdp = TabularMdp::new(k, r, 0.9, vec![0.5, 0.5]).unwrap();
        assert!(validate_mdp(&mdp).is_valid());
    }

    #[test]
    fn short_kernel_row_is_named() {
        let (mut k, r) = two_by_two();
        k[1][0] = vec![0.5, 0.4];
        let err = TabularMdp::new(k, r, 0.9, vec![0.5, 0.5]).unwrap_err();
        let Error::InvalidMdp(report) = err else {
            panic!("expected a validation failure")
        };
        assert_eq!(report.violations().len(), 1);
        match &report.violations()[0] {
            Violation::KernelRowSum { state, action, sum } => {
                assert_eq!((*state, *action), (1, 0));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            v => panic!("unexpected violation {v}"),
        }
        assert!(report.to_string().contains("P(. | 1, 0)"));
    }

    #[test]
    fn zero_initial_mass_rejected() {
        let (k, r) = two_by_two();
        let err = TabularMdp::new(k, r, 0.9, vec![1.0, 0.0]).unwrap_err();
        let Error::InvalidMdp(report) = err else {
            panic!("expected a validation failure")
        };
        assert!(report
            .violations()
            .iter()
            .any(|v| matches!(v, Violation::InitialNotPositive { state: 1, .. })));
    }

    #[test]
    fn discount_must_be_below_one() {
        let (k, r) = two_by_two();
        let err = TabularMdp::new(k, r, 1.0, vec![0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn negative_probability_reported() {
        let (mut k, r) = two_by_two();
        k[0][1] = vec![-0.2, 1.2];
        let Error::InvalidMdp(report) = TabularMdp::new(k, r, 0.5, vec![0.5, 0.5]).unwrap_err() else {
            panic!()
        };
        assert!(matches!(
            report.violations()[0],
            Violation::NegativeTransition { state: 0, action: 1, next: 0, .. }
        ));
    }

    #[test]
    fn file_round_trip() {
        let (k, r) = two_by_two();
        let mdp = TabularMdp::new(k, r, 0.9, vec![0.25, 0.75]).unwrap();
        let json = serde_json::to_string(&mdp).unwrap();
        for key in ["num_states", "num_actions", "gamma", "mu", "\"P\"", "\"R0\""] {
            assert!(json.contains(key), "missing {key}");
        }
        let back: TabularMdp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, mdp);
    }

    #[test]
    fn header_mismatch_is_a_validation_error() {
        let json = r#"{"num_states": 3, "num_actions": 1, "gamma": 0.5, "mu": [1.0],
                       "P": [[[1.0]]], "R0": [[0.0]]}"#;
        let file: MdpFile = serde_json::from_str(json).unwrap();
        assert!(matches!(file.into_mdp(), Err(Error::InvalidMdp(_))));
    }
}
