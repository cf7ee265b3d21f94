use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::densities::{Distribution, GaussianMixture};
use crate::error::Result;
use crate::features::FeatureVector;
use crate::rng::rng_from_seed;
use crate::snpe::{Model, Simulation};

/// `x ~ N(θ, σ²)`; conjugate with a Gaussian prior.
pub struct LinearGaussian {
    pub noise: f64,
}

impl Model for LinearGaussian {
    fn theta_dim(&self) -> usize {
        1
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation> {
        let e: f64 = rng_from_seed(seed).sample(StandardNormal);
        Ok(Simulation { features: FeatureVector::complete(vec![theta[0] + self.noise * e]), sequence: None })
    }
}

pub fn gaussian_prior(sd: f64) -> Distribution {
    Distribution::Mixture(GaussianMixture::gaussian(vec![0.0], &DMatrix::from_element(1, 1, sd * sd)).unwrap())
}

/// Posterior mean and sd for prior `N(0, s0²)`, noise `σ` and observation `x`.
pub fn conjugate(s0: f64, noise: f64, x: f64) -> (f64, f64) {
    let prec = 1.0 / (s0 * s0) + 1.0 / (noise * noise);
    (x / (noise * noise) / prec, prec.sqrt().recip())
}
