//! Tabular toolkit for MDPs whose reward is only known up to an Lp ball.
//!
//! The adversary's worst reward has a closed form in the occupancy measure,
//! which turns robust evaluation into nominal evaluation plus a norm
//! regularizer and makes robust policy gradients cheap.

// `!(x > 0.0)` is how inputs are checked here: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor_critic;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradient;
pub mod mdp;
pub mod norm;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod robust;
pub mod table;
pub mod train;
pub mod uncertainty;

pub use actor_critic::{tabular_actor_critic, ActorCriticConfig, ActorCriticOutcome, ActorCriticState};

pub use error::{Error, Result};
pub use eval::{
    occupancy_exact, occupancy_iterative, optimal_value_iteration, policy_kernel, q_values, return_of,
    solve_value_exact, value_iteration, OccupancyMeasure, QFunction, ValueFunction,
};
pub use gradient::{
    project_simplex, robust_policy_gradient, robust_policy_gradient_softmax, smoothness_constant, SmoothnessExponent,
};
pub use mdp::{load_mdp, save_mdp, validate_mdp, TabularMdp, ValidationReport};
pub use norm::{holder_conjugate, NormOrder};
pub use oracle::{brute_force_worst_reward, OracleConfig, OracleOutcome};
pub use policy::Policy;
pub use robust::{
    rectangularized_value, robust_q, robust_return, robust_value_iteration, worst_case_reward,
    worst_case_reward_for, worst_case_reward_rectangular, WorstCaseReport,
};
pub use table::Table;
pub use train::{
    saddle_certificate, saddle_certificate_for, train_projected_pg, Checkpoint, Parametrization, PgConfig, StepRule,
    TrainOutcome, TrainTrace,
};
pub use uncertainty::{RewardUncertainty, UncertaintyRegistry, UncertaintySpec};
