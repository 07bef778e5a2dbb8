//! Layered run configuration: file, then `--set` overrides, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use rrmdp_core::experiment::sample_random_mdp;
use rrmdp_core::mdp::MdpFile;
use rrmdp_core::uncertainty::{COUPLED, NOMINAL, SA_RECT, S_RECT};
use rrmdp_core::{NormOrder, Policy, Table, TabularMdp, UncertaintySpec};

use crate::error::CliError;

/// Reads a JSON object from `path`, or `{}` when there is no file.
pub fn load_layer(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = read_input(path)?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Config(format!("{}: config must be a JSON object", path.display())));
    }
    Ok(value)
}

/// Parses `key.path=value`. The value is read as JSON when it parses and as
/// a plain string otherwise, so `flavor=s-rect` needs no quoting.
pub fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override `{raw}` has an empty key")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

/// Sets `root[a][b]...` for a dotted key, creating objects on the way.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("cannot set `{key}`: `{part}` is inside a non-object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

pub fn resolve<T: DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp, CliError> {
    let text = read_input(path)?;
    let file: MdpFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.into_mdp()?)
}

/// Reads a policy file, or the policy inside a checkpoint.
pub fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let text = read_input(path)?;
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut value: Value = serde_json::from_str(&text).map_err(bad)?;
    if let Some(inner) = value.get_mut("policy") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(bad)
}

/// The uncertainty set as written in configs and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    #[serde(default = "default_flavor")]
    pub flavor: String,
    /// Radius of the ball, or of every state/pair ball for rectangular sets.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_p")]
    pub p: NormOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_radii: Option<Table>,
}

fn default_flavor() -> String {
    COUPLED.into()
}

fn default_p() -> NormOrder {
    NormOrder::TWO
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig {
            flavor: default_flavor(),
            alpha: 0.0,
            p: default_p(),
            weights: None,
            state_radii: None,
            pair_radii: None,
        }
    }
}

impl SpecConfig {
    pub fn build(&self, num_states: usize, num_actions: usize) -> Result<UncertaintySpec, CliError> {
        let mut spec = match self.flavor.as_str() {
            S_RECT => match &self.state_radii {
                Some(r) => UncertaintySpec::s_rect(r.clone(), self.p),
                None => UncertaintySpec::uniform(S_RECT, self.alpha, self.p, num_states, num_actions),
            },
            SA_RECT => match &self.pair_radii {
                Some(r) => UncertaintySpec::sa_rect(r.clone(), self.p),
                None => UncertaintySpec::uniform(SA_RECT, self.alpha, self.p, num_states, num_actions),
            },
            NOMINAL => UncertaintySpec::nominal(),
            other => {
                if self.state_radii.is_some() || self.pair_radii.is_some() {
                    return Err(CliError::Config(format!("rectangular radii given for the `{other}` flavor")));
                }
                UncertaintySpec::uniform(other, self.alpha, self.p, num_states, num_actions)
            }
        };
        spec.weights = self.weights.clone();
        spec.validate(num_states, num_actions)?;
        Ok(spec)
    }
}

/// A seeded random instance, as an alternative to an MDP file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdp {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub gamma: f64,
}

/// Loads the MDP of a run: a file or a seeded random instance, not both.
pub fn load_mdp_source(path: Option<&Path>, random: Option<&RandomMdp>, seed: u64) -> Result<TabularMdp, CliError> {
    match (path, random) {
        (Some(path), None) => load_mdp(path),
        (None, Some(r)) => Ok(sample_random_mdp(seed, r.num_states, r.num_actions, r.gamma)?),
        _ => Err(CliError::Config("give exactly one of `mdp` and `random_mdp`".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_parse_json_or_text() {
        assert_eq!(parse_override("a.b=0.5").unwrap(), ("a.b".into(), json!(0.5)));
        assert_eq!(parse_override("flavor=s-rect").unwrap(), ("flavor".into(), json!("s-rect")));
        assert_eq!(parse_override("x=[1,2]").unwrap(), ("x".into(), json!([1, 2])));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn nested_set_creates_objects() {
        let mut v = json!({"pg": {"max_iters": 3}});
        set_path(&mut v, "pg.grad_tol", json!(1e-3)).unwrap();
        set_path(&mut v, "spec.alpha", json!(0.2)).unwrap();
        assert_eq!(v, json!({"pg": {"max_iters": 3, "grad_tol": 1e-3}, "spec": {"alpha": 0.2}}));
        assert!(set_path(&mut v, "pg.max_iters.x", json!(1)).is_err());
    }

    #[test]
    fn spec_config_builds_each_flavor() {
        let base = SpecConfig { alpha: 0.3, ..SpecConfig::default() };
        assert_eq!(base.build(2, 2).unwrap(), UncertaintySpec::coupled(0.3, NormOrder::TWO));
        let s = SpecConfig { flavor: S_RECT.into(), ..base.clone() };
        assert_eq!(s.build(2, 2).unwrap().state_radii, Some(vec![0.3, 0.3]));
        let bad = SpecConfig { state_radii: Some(vec![0.1]), ..base };
        assert!(bad.build(2, 2).is_err());
        let unknown: Result<SpecConfig, _> = serde_json::from_value(json!({"radius": 1}));
        assert!(unknown.is_err());
    }
}
