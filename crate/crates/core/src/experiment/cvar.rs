//! Lower-tail risk of a policy under sampled rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::occupancy_exact;
use crate::mdp::TabularMdp;
use crate::policy::Policy;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarResult {
    pub level: f64,
    /// Mean of the `⌈level·n⌉` smallest returns.
    pub cvar: f64,
    pub mean: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<Vec<f64>>,
}

impl CvarResult {
    pub fn without_returns(mut self) -> Self {
        self.returns = None;
        self
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("CVaR level must lie in (0, 1], got {level}")))
    }
}

/// CVaR and mean of a list of returns. Ties are broken by sample index.
pub fn cvar_of_returns(returns: &[f64], level: f64) -> Result<CvarResult> {
    check_level(level)?;
    if returns.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate CVaR of an empty sample".into()));
    }
    let n = returns.len();
    let mut sorted = returns.to_vec();
    // stable sort keeps equal returns in index order
    sorted.sort_by(f64::total_cmp);
    // the 1e-9 guard keeps e.g. 0.05·100 from rounding up to 6
    let k = ((level * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mean = returns.iter().sum::<f64>() / n as f64;
    let cvar = if k == n { mean } else { sorted[..k].iter().sum::<f64>() / k as f64 };
    Ok(CvarResult {
        level,
        // the tail mean cannot exceed the overall mean; clamp rounding noise
        cvar: cvar.min(mean),
        mean,
        n_samples: n,
        returns: Some(returns.to_vec()),
    })
}

/// Returns of `policy` under every sampled reward from a single occupancy solve.
pub fn evaluate_cvar(mdp: &TabularMdp, policy: &Policy, samples: &[Table], level: f64) -> Result<CvarResult> {
    check_level(level)?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate CVaR of an empty sample".into()));
    }
    for sample in samples {
        sample.check_shape(mdp.num_states(), mdp.num_actions(), "reward sample")?;
    }
    let occupancy = occupancy_exact(mdp, policy)?;
    let returns: Vec<f64> = samples.iter().map(|r| occupancy.state_action.dot(r)).collect();
    cvar_of_returns(&returns, level)
}
