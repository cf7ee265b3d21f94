//! Probability distributions used as priors, proposals and posterior outputs.

mod divide;
mod grid;
mod kl;
mod mixture;
mod uniform;

pub use divide::{divide_gaussian, multiply_gaussians, NaturalGaussian};
pub use grid::{analytic_gm_posterior, grid_kl, Grid1d, GridDensity};
pub(crate) use kl::kl_term;
pub use kl::{kl_diag_gaussians, DiagGaussianOverWeights};
pub use mixture::GaussianMixture;
pub use uniform::BoxUniform;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Prior or proposal over simulator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    BoxUniform(BoxUniform),
    Mixture(GaussianMixture),
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::BoxUniform(b) => b.dim(),
            Distribution::Mixture(m) => m.dim(),
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        match self {
            Distribution::BoxUniform(b) => b.log_pdf(x),
            Distribution::Mixture(m) => m.log_pdf(x),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        match self {
            Distribution::BoxUniform(b) => b.sample(n, rng),
            Distribution::Mixture(m) => m.sample(n, rng),
        }
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Distribution::BoxUniform(b) => b.sample_one(rng),
            Distribution::Mixture(m) => m.sample_one(rng),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Distribution::BoxUniform(b) => b.mean(),
            Distribution::Mixture(m) => m.mean(),
        }
    }

    /// Marginal standard deviations.
    pub fn std(&self) -> Vec<f64> {
        match self {
            Distribution::BoxUniform(b) => b.std(),
            Distribution::Mixture(m) => m.covariance().diagonal().iter().map(|v| v.sqrt()).collect(),
        }
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        match self {
            Distribution::BoxUniform(b) => b.contains(x),
            Distribution::Mixture(_) => x.iter().all(|v| v.is_finite()),
        }
    }
}

impl From<BoxUniform> for Distribution {
    fn from(b: BoxUniform) -> Self {
        Distribution::BoxUniform(b)
    }
}

impl From<GaussianMixture> for Distribution {
    fn from(m: GaussianMixture) -> Self {
        Distribution::Mixture(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = log_sum_exp(&[-1000.0, -1001.0]);
        assert!(v.is_finite());
    }
}
