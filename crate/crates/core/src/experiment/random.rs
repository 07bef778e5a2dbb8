//! Seeded random instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng;
use crate::table::Table;

/// Open interval (0, 1], so normalized rows never divide by zero.
fn positive_uniform<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// MDP with uniform random kernel rows, rewards in [0, 1) and initial
/// distribution, all normalized where needed.
pub fn sample_random_mdp(seed: u64, num_states: usize, num_actions: usize, gamma: f64) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Dimension("random MDP needs at least one state and one action".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let mut kernel = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let row: Vec<f64> = (0..num_states).map(|_| positive_uniform(&mut rng)).collect();
        let sum: f64 = row.iter().sum();
        kernel.extend(row.iter().map(|p| p / sum));
    }
    let reward = Table::from_fn(num_states, num_actions, |_, _| rng.random::<f64>());
    let mu: Vec<f64> = (0..num_states).map(|_| positive_uniform(&mut rng)).collect();
    let total: f64 = mu.iter().sum();
    let mu = mu.iter().map(|m| m / total).collect();
    let mdp = TabularMdp::new_unchecked(num_states, num_actions, kernel, reward, gamma, mu)?;
    let report = crate::mdp::validate_mdp(&mdp);
    if !report.is_valid() {
        return Err(Error::InvalidMdp(report));
    }
    Ok(mdp)
}

/// `σ² M Mᵀ / max diag(M Mᵀ)` with `M` uniform on (-1, 1): a dense PSD
/// matrix whose largest variance is exactly `σ²`.
pub fn sample_psd_covariance(seed: u64, dim: usize, scale: f64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::Dimension("covariance dimension must be positive".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidConfig(format!("covariance scale must be positive, got {scale}")));
    }
    let mut rng = rng::stream(seed, 1);
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let mut sigma = &m * m.transpose();
    let max_diag = sigma.diagonal().max();
    if max_diag > 0.0 {
        sigma *= scale / max_diag;
    }
    // exact symmetry regardless of rounding in the product
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(sigma)
}

/// `N(R0, Σ)` over flattened `[s][a]` reward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRewardModel {
    pub mean: Table,
    pub covariance: DMatrix<f64>,
    pub seed: u64,
}

impl GaussianRewardModel {
    pub fn new(mean: Table, covariance: DMatrix<f64>, seed: u64) -> Result<Self> {
        let dim = mean.rows() * mean.cols();
        if covariance.shape() != (dim, dim) {
            return Err(Error::Dimension(format!(
                "covariance is {:?}, expected {dim}x{dim}",
                covariance.shape()
            )));
        }
        let asymmetry = (&covariance - covariance.transpose()).amax();
        if asymmetry > 1e-10 {
            return Err(Error::InvalidConfig(format!("covariance is not symmetric (off by {asymmetry:.2e})")));
        }
        Ok(GaussianRewardModel { mean, covariance, seed })
    }

    /// A factor `L` with `L Lᵀ = Σ`: Cholesky when it succeeds, otherwise the
    /// eigen-decomposition with negative eigenvalues clipped to zero.
    pub fn factor(&self) -> DMatrix<f64> {
        if let Some(chol) = self.covariance.clone().cholesky() {
            return chol.l();
        }
        let eig = self.covariance.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -1e-10 {
            log::warn!("covariance has eigenvalue {min:.3e}; clipping to zero");
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        eig.eigenvectors * DMatrix::from_diagonal(&roots)
    }
}

/// `n` independent draws from `model`, deterministic in its seed.
pub fn sample_perturbed_rewards(model: &GaussianRewardModel, n: usize) -> Result<Vec<Table>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one reward sample".into()));
    }
    let (rows, cols) = model.mean.shape();
    let dim = rows * cols;
    let factor = model.factor();
    let mean = DVector::from_column_slice(model.mean.as_slice());
    let mut rng = rng::stream(model.seed, 2);
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &mean + &factor * z;
            Table::from_flat(rows, cols, draw.as_slice().to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_mdp_is_reproducible_and_valid() {
        let a = sample_random_mdp(3, 4, 2, 0.9).unwrap();
        let b = sample_random_mdp(3, 4, 2, 0.9).unwrap();
        assert_eq!(a, b);
        assert!(crate::mdp::validate_mdp(&a).is_valid());
        assert_ne!(a, sample_random_mdp(4, 4, 2, 0.9).unwrap());
    }

    #[test]
    fn covariance_scaling() {
        let sigma = sample_psd_covariance(5, 6, 0.1).unwrap();
        assert!((sigma.diagonal().max() - 0.1).abs() < 1e-15);
        assert_eq!(sample_psd_covariance(5, 1, 0.3).unwrap()[(0, 0)], 0.3);
    }

    #[test]
    fn zero_covariance_reproduces_mean() {
        let mean = Table::from_fn(2, 2, |s, a| (s + a) as f64);
        let model = GaussianRewardModel::new(mean.clone(), DMatrix::zeros(4, 4), 9).unwrap();
        for draw in sample_perturbed_rewards(&model, 5).unwrap() {
            assert_eq!(draw, mean);
        }
    }
}
