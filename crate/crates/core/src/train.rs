//! Model-based robust policy gradient training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{occupancy_exact, optimal_value_iteration};
use crate::gradient::{project_simplex, robust_evaluation, smoothness_constant_with, SmoothnessExponent};
use crate::mdp::TabularMdp;
use crate::policy::Policy;
use crate::robust::{build_set, worst_case_with_occupancy};
use crate::table::Table;
use crate::uncertainty::{RewardUncertainty, UncertaintySpec};

/// Smallest step Armijo backtracking tries before declaring a stall.
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Parametrization {
    /// Probabilities updated directly and projected back onto the simplex.
    DirectSimplex,
    /// `π(a|s) ∝ exp(temperature · θ(s,a))`.
    Softmax { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    /// `η = 1/β` with β from the smoothness constant.
    InverseSmoothness {
        #[serde(default)]
        exponent: SmoothnessExponent,
    },
    Constant { eta: f64 },
    /// Backtracking from the last accepted step (doubled) until the
    /// sufficient-increase condition with constant `c1` holds.
    Armijo {
        #[serde(default = "default_c1")]
        c1: f64,
        #[serde(default = "default_backtrack")]
        backtrack: f64,
        #[serde(default = "default_initial_step")]
        initial_step: f64,
    },
}

fn default_c1() -> f64 {
    1e-4
}

fn default_backtrack() -> f64 {
    0.5
}

fn default_initial_step() -> f64 {
    1.0
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Armijo {
            c1: default_c1(),
            backtrack: default_backtrack(),
            initial_step: default_initial_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgConfig {
    #[serde(default = "default_parametrization")]
    pub parametrization: Parametrization,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record the duality-gap suboptimality bound every this many
    /// iterations; 0 disables it.
    #[serde(default)]
    pub monitor_every: usize,
}

fn default_parametrization() -> Parametrization {
    Parametrization::DirectSimplex
}

fn default_max_iters() -> usize {
    10_000
}

fn default_grad_tol() -> f64 {
    1e-6
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            parametrization: default_parametrization(),
            step_rule: StepRule::default(),
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            seed: 0,
            monitor_every: 0,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("grad_tol must be non-negative, got {}", self.grad_tol)));
        }
        if let Parametrization::Softmax { temperature } = self.parametrization {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
            }
        }
        match self.step_rule {
            StepRule::Constant { eta } if !(eta > 0.0) || !eta.is_finite() => {
                Err(Error::InvalidConfig(format!("constant step must be positive, got {eta}")))
            }
            StepRule::Armijo { c1, backtrack, initial_step } => {
                if !(c1 > 0.0 && c1 < 1.0) || !(backtrack > 0.0 && backtrack < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "Armijo constants must lie in (0, 1), got c1 = {c1}, backtrack = {backtrack}"
                    )));
                }
                if !(initial_step > 0.0) || !initial_step.is_finite() {
                    return Err(Error::InvalidConfig(format!("initial step must be positive, got {initial_step}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One iteration of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    /// Robust return of the iterate before the update.
    pub robust_return: f64,
    /// Sup norm of the gradient.
    pub grad_norm: f64,
    pub step_size: f64,
    /// Euclidean norm of the parameter change.
    pub update_norm: f64,
    /// Duality-gap bound on `ρ* - ρ(π_k)`, when monitored.
    pub suboptimality_bound: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    /// Stopping statistic at exit (gradient mapping norm, or the logits
    /// gradient norm for softmax).
    pub final_stationarity: f64,
    pub final_robust_return: f64,
    /// False when `max_iters` ran out or a line search stalled.
    pub converged: bool,
}

impl TrainTrace {
    pub fn robust_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.robust_return)
    }

    /// Writes `iter,robust_return,grad_norm,step_size`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        writer
            .write_record(["iter", "robust_return", "grad_norm", "step_size"])
            .map_err(csv_err)?;
        for r in &self.records {
            writer
                .write_record([
                    r.iter.to_string(),
                    r.robust_return.to_string(),
                    r.grad_norm.to_string(),
                    r.step_size.to_string(),
                ])
                .map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// The trained artifact, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Table>,
    pub spec: UncertaintySpec,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Result of checking that a policy is a best response to its own worst reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCertificate {
    pub robust_return: f64,
    /// Optimal nominal return when the reward is frozen at the policy's worst case.
    pub best_response_return: f64,
    /// `best_response_return - robust_return`; an upper bound on the
    /// robust suboptimality, zero at a saddle point.
    pub gap: f64,
}

/// Saddle certificate of `policy` against `set`.
pub fn saddle_certificate(mdp: &TabularMdp, policy: &Policy, set: &dyn RewardUncertainty) -> Result<SaddleCertificate> {
    policy.check_dims(mdp.num_states(), mdp.num_actions())?;
    let occupancy = occupancy_exact(mdp, policy)?;
    let report = worst_case_with_occupancy(mdp, policy, set, &occupancy);
    let (values, _) = optimal_value_iteration(mdp, &report.worst_reward, 1e-11)?;
    let best: f64 = mdp.mu().iter().zip(values.iter()).map(|(m, v)| m * v).sum();
    Ok(SaddleCertificate {
        robust_return: report.robust_return,
        best_response_return: best,
        gap: best - report.robust_return,
    })
}

/// Saddle certificate for a spec resolved through the registry.
pub fn saddle_certificate_for(mdp: &TabularMdp, policy: &Policy, spec: &UncertaintySpec) -> Result<SaddleCertificate> {
    let set = build_set(mdp, spec)?;
    saddle_certificate(mdp, policy, set.as_ref())
}

/// Trained policy with its trace and, for softmax runs, the logits.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub theta: Option<Table>,
    pub trace: TrainTrace,
}

impl TrainOutcome {
    pub fn checkpoint(&self, spec: &UncertaintySpec, seed: u64) -> Checkpoint {
        Checkpoint {
            policy: self.policy.clone(),
            theta: self.theta.clone(),
            spec: spec.clone(),
            seed,
        }
    }
}

/// Maximizes the robust return by projected (or softmax) gradient ascent
/// starting from the uniform policy.
pub fn train_projected_pg(mdp: &TabularMdp, spec: &UncertaintySpec, config: &PgConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let set = build_set(mdp, spec)?;
    let fixed_step = match config.step_rule {
        StepRule::InverseSmoothness { exponent } => Some(1.0 / smoothness_constant_with(mdp, spec, exponent)?),
        StepRule::Constant { eta } => Some(eta),
        StepRule::Armijo { .. } => None,
    };
    if spec.p.is_one() && spec.flavor != crate::uncertainty::NOMINAL {
        log::warn!("p = 1: the robust return is not differentiable, using a subgradient");
    }
    let engine = Engine {
        mdp,
        set: set.as_ref(),
        config,
        fixed_step,
    };
    match config.parametrization {
        Parametrization::DirectSimplex => engine.run_direct(),
        Parametrization::Softmax { temperature } => engine.run_softmax(temperature),
    }
}

struct Engine<'a> {
    mdp: &'a TabularMdp,
    set: &'a dyn RewardUncertainty,
    config: &'a PgConfig,
    fixed_step: Option<f64>,
}

impl Engine<'_> {
    fn robust_return(&self, policy: &Policy) -> Result<f64> {
        let occupancy = occupancy_exact(self.mdp, policy)?;
        Ok(occupancy.state_action.dot(self.mdp.reward()) - self.set.regularizer(policy, &occupancy))
    }

    fn bound(&self, iter: usize, policy: &Policy) -> Result<Option<f64>> {
        if self.config.monitor_every == 0 || !iter.is_multiple_of(self.config.monitor_every) {
            return Ok(None);
        }
        Ok(Some(saddle_certificate(self.mdp, policy, self.set)?.gap))
    }

    fn armijo(&self) -> Option<(f64, f64, f64)> {
        match self.config.step_rule {
            StepRule::Armijo { c1, backtrack, initial_step } => Some((c1, backtrack, initial_step)),
            _ => None,
        }
    }

    fn run_direct(&self) -> Result<TrainOutcome> {
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        let mut policy = Policy::uniform(ns, na);
        let mut trace = TrainTrace::default();
        let mut step = self.armijo().map_or(self.fixed_step.unwrap_or(1.0), |(_, _, s)| s);

        for iter in 0..self.config.max_iters {
            let eval = robust_evaluation(self.mdp, &policy, self.set)?;
            let grad = eval.direct_gradient();
            let current = eval.robust_return;
            let ascend = |eta: f64| -> Result<Policy> {
                let mut probs = Vec::with_capacity(ns * na);
                for s in 0..ns {
                    let moved: Vec<f64> = policy.row(s).iter().zip(grad.row(s)).map(|(p, g)| p + eta * g).collect();
                    probs.extend(project_simplex(&moved));
                }
                Ok(Policy::from_table_renormalized(Table::from_flat(ns, na, probs)?))
            };

            let (next, eta, stalled) = match self.armijo() {
                None => (ascend(step)?, step, false),
                Some((c1, backtrack, _)) => {
                    let mut eta = step * 2.0;
                    loop {
                        let candidate = ascend(eta)?;
                        let increase: f64 = candidate
                            .probs()
                            .as_slice()
                            .iter()
                            .zip(policy.probs().as_slice())
                            .zip(grad.as_slice())
                            .map(|((n, o), g)| g * (n - o))
                            .sum();
                        if self.robust_return(&candidate)? >= current + c1 * increase {
                            break (candidate, eta, false);
                        }
                        eta *= backtrack;
                        if eta < MIN_STEP {
                            break (policy.clone(), eta, true);
                        }
                    }
                }
            };
            let update_norm = next
                .probs()
                .as_slice()
                .iter()
                .zip(policy.probs().as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let mapping = update_norm / eta;
            trace.records.push(TrainRecord {
                iter,
                robust_return: current,
                grad_norm: grad.max_abs(),
                step_size: eta,
                update_norm,
                suboptimality_bound: self.bound(iter, &policy)?,
            });
            trace.final_stationarity = mapping;
            trace.final_robust_return = current;
            if mapping <= self.config.grad_tol || stalled {
                trace.converged = !stalled || update_norm == 0.0;
                if stalled {
                    log::debug!("line search stalled at iteration {iter}");
                }
                return Ok(TrainOutcome { policy, theta: None, trace });
            }
            policy = next;
            step = eta;
        }
        trace.final_robust_return = self.robust_return(&policy)?;
        log::info!("max_iters reached with gradient mapping norm {:.3e}", trace.final_stationarity);
        Ok(TrainOutcome { policy, theta: None, trace })
    }

    fn run_softmax(&self, temperature: f64) -> Result<TrainOutcome> {
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        let mut theta = Table::zeros(ns, na);
        let mut policy = Policy::softmax(&theta, temperature);
        let mut trace = TrainTrace::default();
        let mut step = self.armijo().map_or(self.fixed_step.unwrap_or(1.0), |(_, _, s)| s);

        for iter in 0..self.config.max_iters {
            let eval = robust_evaluation(self.mdp, &policy, self.set)?;
            let grad = eval.softmax_gradient(&policy, temperature);
            let current = eval.robust_return;
            let grad_sq: f64 = grad.as_slice().iter().map(|g| g * g).sum();
            let grad_l2 = grad_sq.sqrt();
            let record = |eta: f64, bound| TrainRecord {
                iter,
                robust_return: current,
                grad_norm: grad.max_abs(),
                step_size: eta,
                update_norm: eta * grad_l2,
                suboptimality_bound: bound,
            };
            trace.final_stationarity = grad_l2;
            trace.final_robust_return = current;
            if grad_l2 <= self.config.grad_tol {
                trace.records.push(record(0.0, self.bound(iter, &policy)?));
                trace.converged = true;
                return Ok(TrainOutcome { policy, theta: Some(theta), trace });
            }
            let eta = match self.armijo() {
                None => step,
                Some((c1, backtrack, _)) => {
                    let mut eta = step * 2.0;
                    loop {
                        let candidate = Policy::softmax(&theta.zip_map(&grad, |t, g| t + eta * g), temperature);
                        if self.robust_return(&candidate)? >= current + c1 * eta * grad_sq {
                            break eta;
                        }
                        eta *= backtrack;
                        if eta < MIN_STEP {
                            break 0.0;
                        }
                    }
                }
            };
            trace.records.push(record(eta, self.bound(iter, &policy)?));
            if eta == 0.0 {
                log::debug!("line search stalled at iteration {iter}");
                return Ok(TrainOutcome { policy, theta: Some(theta), trace });
            }
            theta = theta.zip_map(&grad, |t, g| t + eta * g);
            policy = Policy::softmax(&theta, temperature);
            step = eta;
        }
        trace.final_robust_return = self.robust_return(&policy)?;
        Ok(TrainOutcome { policy, theta: Some(theta), trace })
    }
}
