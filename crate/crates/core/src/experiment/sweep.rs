//! α-sweeps comparing robust training methods by their CVaR under
//! correlated Gaussian reward noise.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cvar::evaluate_cvar;
use super::random::{sample_perturbed_rewards, sample_psd_covariance, sample_random_mdp, GaussianRewardModel};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::norm::NormOrder;
use crate::policy::Policy;
use crate::rng::derive_seed;
use crate::robust::{build_set, worst_case_reward_for};
use crate::table::Table;
use crate::train::{train_projected_pg, PgConfig, StepRule};
use crate::uncertainty::{UncertaintySpec, COUPLED, NOMINAL, SA_RECT, S_RECT};

/// Training settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPg {
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default = "default_pg_iters")]
    pub max_iters: usize,
    #[serde(default = "default_pg_tol")]
    pub grad_tol: f64,
}

fn default_pg_iters() -> usize {
    2000
}

fn default_pg_tol() -> f64 {
    1e-6
}

impl Default for SweepPg {
    fn default() -> Self {
        SweepPg {
            step_rule: StepRule::default(),
            max_iters: default_pg_iters(),
            grad_tol: default_pg_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(rename = "S_list", default = "default_state_counts")]
    pub state_counts: Vec<usize>,
    #[serde(rename = "A", default = "default_actions")]
    pub num_actions: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_p")]
    pub p: NormOrder,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_level")]
    pub cvar_level: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub pg: SweepPg,
}

fn default_seed() -> u64 {
    1
}

fn default_state_counts() -> Vec<usize> {
    vec![5, 10, 15]
}

fn default_actions() -> usize {
    5
}

fn default_gamma() -> f64 {
    0.99
}

fn default_p() -> NormOrder {
    NormOrder::TWO
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
}

fn default_samples() -> usize {
    1000
}

fn default_level() -> f64 {
    0.05
}

fn default_sigma2() -> f64 {
    0.1
}

fn default_methods() -> Vec<String> {
    vec![COUPLED.into(), S_RECT.into(), NOMINAL.into()]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: default_seed(),
            state_counts: default_state_counts(),
            num_actions: default_actions(),
            gamma: default_gamma(),
            p: default_p(),
            alpha_grid: default_alpha_grid(),
            n_samples: default_samples(),
            cvar_level: default_level(),
            sigma2: default_sigma2(),
            methods: default_methods(),
            pg: SweepPg::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.state_counts.is_empty() || self.state_counts.contains(&0) {
            return invalid(format!("S_list must be non-empty and positive, got {:?}", self.state_counts));
        }
        if self.num_actions == 0 {
            return invalid("A must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return invalid(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return invalid(format!("alpha_grid must be non-empty and non-negative, got {:?}", self.alpha_grid));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("alpha_grid must be strictly increasing, got {:?}", self.alpha_grid));
        }
        if self.n_samples == 0 {
            return invalid("n_samples must be positive".into());
        }
        if !(self.cvar_level > 0.0 && self.cvar_level <= 1.0) {
            return invalid(format!("cvar_level must lie in (0, 1], got {}", self.cvar_level));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return invalid(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.methods.is_empty() {
            return invalid("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if ![COUPLED, S_RECT, SA_RECT, NOMINAL].contains(&m.as_str()) {
                return Err(Error::UnknownFlavor(m.clone()));
            }
            if self.methods[..i].contains(m) {
                return invalid(format!("method `{m}` listed twice"));
            }
        }
        self.pg_config(0).validate()
    }

    fn pg_config(&self, seed: u64) -> PgConfig {
        PgConfig {
            step_rule: self.pg.step_rule,
            max_iters: self.pg.max_iters,
            grad_tol: self.pg.grad_tol,
            seed,
            ..PgConfig::default()
        }
    }

    /// Spec a method trains against at radius `alpha`.
    pub fn method_spec(&self, method: &str, alpha: f64, num_states: usize) -> UncertaintySpec {
        if method == NOMINAL {
            return UncertaintySpec::nominal();
        }
        UncertaintySpec::uniform(method, alpha, self.p, num_states, self.num_actions)
    }
}

/// One (S, α, method) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub method: String,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub seed: u64,
    pub policy: Option<Policy>,
    pub cvar: Option<f64>,
    pub mean: Option<f64>,
    /// Robust return under the set the method trained against.
    pub robust_return: Option<f64>,
    /// Robust return under the coupled ball of radius α.
    pub coupled_robust_return: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, num_states: usize, alpha: f64, method: &str) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.num_states == num_states && c.alpha == alpha && c.method == method)
    }
}

/// Shared per-size inputs: the MDP and the perturbation draws every cell
/// of that size is evaluated on.
struct Instance {
    mdp: TabularMdp,
    samples: Vec<Table>,
}

fn instance(config: &SweepConfig, num_states: usize) -> Result<Instance> {
    let mdp = sample_random_mdp(config.seed, num_states, config.num_actions, config.gamma)?;
    let dim = num_states * config.num_actions;
    let covariance = sample_psd_covariance(config.seed, dim, config.sigma2)?;
    let model = GaussianRewardModel::new(mdp.reward().clone(), covariance, config.seed)?;
    let samples = sample_perturbed_rewards(&model, config.n_samples)?;
    Ok(Instance { mdp, samples })
}

struct Outcome {
    policy: Policy,
    cvar: f64,
    mean: f64,
    robust_return: f64,
    coupled_robust_return: f64,
    iterations: usize,
    converged: bool,
}

fn run_cell(config: &SweepConfig, inst: &Instance, alpha: f64, method: &str, seed: u64) -> Result<Outcome> {
    let ns = inst.mdp.num_states();
    let spec = config.method_spec(method, alpha, ns);
    let trained = train_projected_pg(&inst.mdp, &spec, &config.pg_config(seed))?;
    let risk = evaluate_cvar(&inst.mdp, &trained.policy, &inst.samples, config.cvar_level)?;
    let set = build_set(&inst.mdp, &spec)?;
    let robust_return = crate::robust::robust_return(&inst.mdp, &trained.policy, set.as_ref())?;
    let coupled = worst_case_reward_for(&inst.mdp, &trained.policy, &UncertaintySpec::coupled(alpha, config.p))?;
    Ok(Outcome {
        cvar: risk.cvar,
        mean: risk.mean,
        robust_return,
        coupled_robust_return: coupled.robust_return,
        iterations: trained.trace.records.len(),
        converged: trained.trace.converged,
        policy: trained.policy,
    })
}

/// Runs every cell on the global thread pool.
pub fn run_alpha_sweep(config: &SweepConfig) -> Result<SweepResult> {
    run_alpha_sweep_with_jobs(config, None)
}

/// Runs every cell on `jobs` threads (all cores when `None`). Results do
/// not depend on the thread count.
pub fn run_alpha_sweep_with_jobs(config: &SweepConfig, jobs: Option<usize>) -> Result<SweepResult> {
    config.validate()?;
    let instances: Vec<Instance> = config
        .state_counts
        .iter()
        .map(|&ns| instance(config, ns))
        .collect::<Result<_>>()?;

    let mut keys = Vec::new();
    for (si, _) in config.state_counts.iter().enumerate() {
        for &alpha in &config.alpha_grid {
            for method in &config.methods {
                keys.push((si, alpha, method.as_str()));
            }
        }
    }
    let work = || -> Vec<SweepCell> {
        keys.par_iter()
            .enumerate()
            .map(|(index, &(si, alpha, method))| {
                let inst = &instances[si];
                let seed = derive_seed(config.seed, index as u64);
                let mut cell = SweepCell {
                    alpha,
                    method: method.to_string(),
                    num_states: inst.mdp.num_states(),
                    num_actions: config.num_actions,
                    seed,
                    policy: None,
                    cvar: None,
                    mean: None,
                    robust_return: None,
                    coupled_robust_return: None,
                    iterations: 0,
                    converged: false,
                    error: None,
                };
                match run_cell(config, inst, alpha, method, seed) {
                    Ok(out) => {
                        cell.policy = Some(out.policy);
                        cell.cvar = Some(out.cvar);
                        cell.mean = Some(out.mean);
                        cell.robust_return = Some(out.robust_return);
                        cell.coupled_robust_return = Some(out.coupled_robust_return);
                        cell.iterations = out.iterations;
                        cell.converged = out.converged;
                    }
                    Err(e) => {
                        log::warn!("cell S={} alpha={alpha} method={method} failed: {e}", cell.num_states);
                        cell.error = Some(e.to_string());
                    }
                }
                cell
            })
            .collect()
    };
    let cells = match jobs {
        None => work(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
    };
    Ok(SweepResult {
        config: config.clone(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    /// Format implied by a `.csv` or `.json` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(ExportFormat::Csv),
            "json" => Some(ExportFormat::Json),
            _ => None,
        }
    }
}

/// Writes one CSV row per cell (`alpha,method,S,A,seed,cvar,mean`, empty
/// fields for failed cells) or the whole result as JSON.
pub fn export_results(result: &SweepResult, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ExportFormat::Json => {
            let text = serde_json::to_string_pretty(result).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
        }
        ExportFormat::Csv => {
            let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
            let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
            writer
                .write_record(["alpha", "method", "S", "A", "seed", "cvar", "mean"])
                .map_err(csv_err)?;
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            for c in &result.cells {
                writer
                    .write_record([
                        c.alpha.to_string(),
                        c.method.clone(),
                        c.num_states.to_string(),
                        c.num_actions.to_string(),
                        c.seed.to_string(),
                        opt(c.cvar),
                        opt(c.mean),
                    ])
                    .map_err(csv_err)?;
            }
            writer.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
        }
    }
}

/// Reads a JSON sweep result back.
pub fn load_results(path: impl AsRef<Path>) -> Result<SweepResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let config: SweepConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config, SweepConfig::default());
        assert!(config.validate().is_ok());
        let bad = SweepConfig {
            alpha_grid: vec![0.0, 0.5, 0.5],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            methods: vec!["box".into()],
            ..SweepConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::UnknownFlavor(_))));
        assert!(serde_json::from_str::<SweepConfig>(r#"{"s_list": [3]}"#).is_err());
    }
}
