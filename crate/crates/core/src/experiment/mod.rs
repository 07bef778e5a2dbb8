//! The tabular CVaR study: random MDPs, correlated Gaussian reward noise,
//! and α-sweeps comparing robust training against rectangular baselines.

pub mod cvar;
pub mod random;
pub mod sweep;

pub use cvar::{cvar_of_returns, evaluate_cvar, CvarResult};
pub use random::{sample_perturbed_rewards, sample_psd_covariance, sample_random_mdp, GaussianRewardModel};
pub use sweep::{
    export_results, load_results, run_alpha_sweep, run_alpha_sweep_with_jobs, ExportFormat, SweepCell, SweepConfig,
    SweepPg, SweepResult,
};
