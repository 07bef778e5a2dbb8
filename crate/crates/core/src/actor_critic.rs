//! Online tabular actor-critic for reward-robust MDPs.
//!
//! The agent only sees sampled transitions and nominal rewards. Three
//! estimators run side by side on decaying step sizes: a successor table
//! `M ≈ (I - γP^π)^{-1}` learned by TD, from which the occupancy estimate
//! `ζ = μᵀM` follows; a critic `ω ≈ Q` under the reward penalized by the
//! worst case against `ζ`; and a softmax actor on a slower schedule.
//!
//! Trajectories restart from `μ` with probability `1-γ` after every step,
//! so visited states are distributed proportionally to the occupancy
//! measure and per-visit actor updates follow the policy gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{dot, OccupancyMeasure};
use crate::gradient::robust_evaluation;
use crate::mdp::TabularMdp;
use crate::policy::Policy;
use crate::rng::{self, SeededRng};
use crate::robust::build_set;
use crate::table::Table;
use crate::train::{TrainRecord, TrainTrace};
use crate::uncertainty::{RewardUncertainty, UncertaintySpec};

/// Sample access to an environment.
pub trait Simulator {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    /// Initial distribution, needed to read the occupancy off the successor table.
    fn initial_distribution(&self) -> &[f64];
    fn reset(&self, rng: &mut SeededRng) -> usize;
    /// Nominal reward and next state of taking `action` in `state`.
    fn step(&self, state: usize, action: usize, rng: &mut SeededRng) -> (f64, usize);
}

impl Simulator for TabularMdp {
    fn num_states(&self) -> usize {
        TabularMdp::num_states(self)
    }

    fn num_actions(&self) -> usize {
        TabularMdp::num_actions(self)
    }

    fn gamma(&self) -> f64 {
        TabularMdp::gamma(self)
    }

    fn initial_distribution(&self) -> &[f64] {
        self.mu()
    }

    fn reset(&self, rng: &mut SeededRng) -> usize {
        rng::categorical(rng, self.mu())
    }

    fn step(&self, state: usize, action: usize, rng: &mut SeededRng) -> (f64, usize) {
        let next = rng::categorical(rng, self.transition(state, action));
        (self.reward()[(state, action)], next)
    }
}

/// `coef / (1 + t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub coef: f64,
    pub exponent: f64,
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        self.coef / (1.0 + t as f64).powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCriticConfig {
    /// Number of batches.
    pub total_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Step sizes of the critic and the occupancy estimate.
    #[serde(default = "default_fast")]
    pub fast: Schedule,
    /// Step size of the actor.
    #[serde(default = "default_slow")]
    pub slow: Schedule,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep θ fixed and only learn `ω` and `ζ`.
    #[serde(default)]
    pub freeze_actor: bool,
    /// Evaluate the current policy exactly every this many batches; 0 disables.
    #[serde(default)]
    pub record_every: usize,
    /// Abort when `max |ω|` exceeds this multiple of the largest value any
    /// reward in the set can produce.
    #[serde(default = "default_divergence_factor")]
    pub divergence_factor: f64,
}

fn default_batch_size() -> usize {
    32
}

fn default_fast() -> Schedule {
    Schedule { coef: 0.5, exponent: 0.6 }
}

// Equal to the critic coefficient so the actor step never exceeds the critic step.
fn default_slow() -> Schedule {
    Schedule { coef: 0.5, exponent: 0.9 }
}

fn default_temperature() -> f64 {
    1.0
}

fn default_divergence_factor() -> f64 {
    100.0
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        ActorCriticConfig {
            total_steps: 20_000,
            batch_size: default_batch_size(),
            fast: default_fast(),
            slow: default_slow(),
            temperature: default_temperature(),
            seed: 0,
            freeze_actor: false,
            record_every: 0,
            divergence_factor: default_divergence_factor(),
        }
    }
}

impl ActorCriticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        positive("fast.coef", self.fast.coef)?;
        positive("slow.coef", self.slow.coef)?;
        positive("temperature", self.temperature)?;
        positive("divergence_factor", self.divergence_factor)?;
        if self.fast.coef > 1.0 {
            return Err(Error::InvalidConfig("fast.coef above 1 overshoots the TD targets".into()));
        }
        for (name, e) in [("fast.exponent", self.fast.exponent), ("slow.exponent", self.slow.exponent)] {
            if !(e > 0.5 && e <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0.5, 1], got {e}")));
            }
        }
        Ok(())
    }
}

/// Learned quantities of one actor-critic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticState {
    /// Softmax logits.
    pub theta: Table,
    /// Critic, `Q` under the penalized reward.
    pub omega: Table,
    /// Successor table; row `s` estimates the discounted visits starting at `s`.
    pub successor: Table,
    /// Batches processed so far; drives the schedules.
    pub step: usize,
}

impl ActorCriticState {
    /// `θ = 0`, `ω = 0`, `M = I` (so `ζ = μ`).
    pub fn initial(num_states: usize, num_actions: usize) -> Self {
        ActorCriticState {
            theta: Table::zeros(num_states, num_actions),
            omega: Table::zeros(num_states, num_actions),
            successor: Table::from_fn(num_states, num_states, |i, j| if i == j { 1.0 } else { 0.0 }),
            step: 0,
        }
    }

    /// Starts from logits reproducing `policy` at `temperature`, e.g. to
    /// evaluate it with a frozen actor.
    pub fn from_policy(policy: &Policy, temperature: f64) -> Self {
        let mut state = Self::initial(policy.num_states(), policy.num_actions());
        state.theta = policy
            .probs()
            .map(|p| if p > 0.0 { p.ln() / temperature } else { -1e3 / temperature });
        state
    }

    pub fn policy(&self, temperature: f64) -> Policy {
        Policy::softmax(&self.theta, temperature)
    }

    /// State occupancy estimate `ζ = μᵀM`.
    pub fn zeta(&self, mu: &[f64]) -> Vec<f64> {
        (0..self.successor.cols())
            .map(|j| mu.iter().enumerate().map(|(i, m)| m * self.successor[(i, j)]).sum())
            .collect()
    }

    fn check_dims(&self, ns: usize, na: usize) -> Result<()> {
        self.theta.check_shape(ns, na, "theta")?;
        self.omega.check_shape(ns, na, "omega")?;
        self.successor.check_shape(ns, ns, "successor")
    }
}

#[derive(Debug, Clone)]
pub struct ActorCriticOutcome {
    pub policy: Policy,
    pub state: ActorCriticState,
    pub trace: TrainTrace,
}

/// Runs Alg. 1 in tabular form on `env` for `config.total_steps` batches.
///
/// `mdp` is used only for the exact evaluations recorded in the trace.
pub fn tabular_actor_critic(
    mdp: &TabularMdp,
    spec: &UncertaintySpec,
    init: ActorCriticState,
    config: &ActorCriticConfig,
) -> Result<ActorCriticOutcome> {
    config.validate()?;
    let set = build_set(mdp, spec)?;
    run(mdp, Some(mdp), set.as_ref(), init, config)
}

/// Actor-critic against any simulator; the trace stays empty without a model.
pub fn actor_critic_on<E: Simulator>(
    env: &E,
    set: &dyn RewardUncertainty,
    init: ActorCriticState,
    config: &ActorCriticConfig,
) -> Result<ActorCriticOutcome> {
    config.validate()?;
    run(env, None, set, init, config)
}

fn run<E: Simulator>(
    env: &E,
    model: Option<&TabularMdp>,
    set: &dyn RewardUncertainty,
    mut state: ActorCriticState,
    config: &ActorCriticConfig,
) -> Result<ActorCriticOutcome> {
    let (ns, na, gamma) = (env.num_states(), env.num_actions(), env.gamma());
    state.check_dims(ns, na)?;
    let mu = env.initial_distribution().to_vec();
    let mut rng = rng::stream(config.seed, 0);
    let mut trace = TrainTrace::default();
    let mut reward_bound: f64 = 0.0;

    let mut s = env.reset(&mut rng);
    let mut omega_sum = Table::zeros(ns, na);
    let mut omega_visits = Table::zeros(ns, na);
    let mut successor_sum = Table::zeros(ns, ns);
    let mut state_visits = vec![0.0; ns];
    let mut actor_sum = Table::zeros(ns, na);

    for _ in 0..config.total_steps {
        let t = state.step;
        let policy = state.policy(config.temperature);
        let zeta = state.zeta(&mu);
        let occupancy = OccupancyMeasure::from_state_mass(zeta.iter().map(|z| z.max(0.0)).collect(), &policy);
        let penalty = set.penalty(&policy, &occupancy);
        let next_values: Vec<f64> = (0..ns).map(|s| dot(policy.row(s), state.omega.row(s))).collect();

        omega_sum.as_mut_slice().fill(0.0);
        omega_visits.as_mut_slice().fill(0.0);
        successor_sum.as_mut_slice().fill(0.0);
        state_visits.fill(0.0);
        actor_sum.as_mut_slice().fill(0.0);

        for _ in 0..config.batch_size {
            let a = rng::categorical(&mut rng, policy.row(s));
            let (r, next) = env.step(s, a, &mut rng);
            reward_bound = reward_bound.max(r.abs() + penalty[(s, a)]);

            let delta = r - penalty[(s, a)] + gamma * next_values[next] - state.omega[(s, a)];
            omega_sum[(s, a)] += delta;
            omega_visits[(s, a)] += 1.0;

            state_visits[s] += 1.0;
            let row = successor_sum.row_mut(s);
            for (j, acc) in row.iter_mut().enumerate() {
                let target = if j == s { 1.0 } else { 0.0 } + gamma * state.successor[(next, j)];
                *acc += target - state.successor[(s, j)];
            }

            if !config.freeze_actor {
                let q = state.omega.row(s);
                let baseline = next_values[s];
                for (b, acc) in actor_sum.row_mut(s).iter_mut().enumerate() {
                    *acc += config.temperature * policy.prob(s, b) * (q[b] - baseline);
                }
            }

            s = if rng.random::<f64>() < gamma { next } else { env.reset(&mut rng) };
        }

        let eta_fast = config.fast.at(t);
        let eta_slow = config.slow.at(t);
        for i in 0..ns * na {
            let visits = omega_visits.as_slice()[i];
            if visits > 0.0 {
                state.omega.as_mut_slice()[i] += eta_fast * omega_sum.as_slice()[i] / visits;
            }
        }
        for i in 0..ns {
            if state_visits[i] > 0.0 {
                let scale = eta_fast / state_visits[i];
                for j in 0..ns {
                    state.successor[(i, j)] += scale * successor_sum[(i, j)];
                }
            }
        }
        if !config.freeze_actor {
            // visits are distributed as (1-γ)d, so the per-visit mean is (1-γ) times the gradient
            let scale = eta_slow / (config.batch_size as f64 * (1.0 - gamma));
            state.theta = state.theta.zip_map(&actor_sum, |th, g| th + scale * g);
        }
        state.step += 1;

        let limit = config.divergence_factor * reward_bound.max(1.0) / (1.0 - gamma);
        let omega_max = state.omega.max_abs();
        if !omega_max.is_finite() || omega_max > limit {
            return Err(Error::Numerical(format!(
                "critic diverged at batch {t}: max |ω| = {omega_max:.3e} exceeds {limit:.3e}"
            )));
        }

        if let Some(mdp) = model {
            if config.record_every > 0 && (t + 1).is_multiple_of(config.record_every) {
                let policy = state.policy(config.temperature);
                let eval = robust_evaluation(mdp, &policy, set)?;
                trace.records.push(TrainRecord {
                    iter: t + 1,
                    robust_return: eval.robust_return,
                    grad_norm: actor_sum.max_abs() / (config.batch_size as f64 * (1.0 - gamma)),
                    step_size: eta_slow,
                    update_norm: eta_slow * actor_sum.max_abs() / (config.batch_size as f64 * (1.0 - gamma)),
                    suboptimality_bound: None,
                });
            }
        }
    }

    let policy = state.policy(config.temperature);
    if let Some(mdp) = model {
        trace.final_robust_return = robust_evaluation(mdp, &policy, set)?.robust_return;
    }
    trace.converged = true;
    Ok(ActorCriticOutcome { policy, state, trace })
}
