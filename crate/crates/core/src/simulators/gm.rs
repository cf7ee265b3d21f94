use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::LN_2PI;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmVariant {
    /// `α N(θ, σ₁²) + (1−α) N(θ, σ₂²)`
    CommonMean,
    /// `α N(θ, σ₁²) + (1−α) N(−θ, σ₁²)`
    Bimodal,
}

/// Two-component Gaussian mixture simulator with a scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmSpec {
    pub variant: GmVariant,
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    #[serde(default = "default_samples")]
    pub samples_per_draw: usize,
}

fn default_samples() -> usize {
    50
}

impl GmSpec {
    pub fn common_mean() -> Self {
        GmSpec { variant: GmVariant::CommonMean, alpha: 0.5, sigma1: 1.0, sigma2: 0.1, samples_per_draw: 1 }
    }

    pub fn bimodal() -> Self {
        GmSpec { variant: GmVariant::Bimodal, alpha: 0.5, sigma1: 1.0, sigma2: 1.0, samples_per_draw: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument("mixture widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument("mixture weight alpha must lie in [0, 1]".into()));
        }
        if self.samples_per_draw == 0 {
            return Err(Error::InvalidArgument("samples_per_draw must be positive".into()));
        }
        Ok(())
    }

    fn second(&self, theta: f64) -> (f64, f64) {
        match self.variant {
            GmVariant::CommonMean => (theta, self.sigma2),
            GmVariant::Bimodal => (-theta, self.sigma1),
        }
    }

    /// `ln p(x | θ)` for a single draw.
    pub fn log_likelihood(&self, x: f64, theta: f64) -> f64 {
        let ln_n = |m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * LN_2PI;
        let (m2, s2) = self.second(theta);
        let a = self.alpha.ln() + ln_n(theta, self.sigma1);
        let b = (1.0 - self.alpha).ln() + ln_n(m2, s2);
        crate::densities::log_sum_exp(&[a, b])
    }
}

/// Independent draws from the mixture at parameter `theta`.
pub fn simulate_gm(spec: &GmSpec, theta: f64, rng: &mut Rng) -> Vec<f64> {
    (0..spec.samples_per_draw)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            if rng.random::<f64>() < spec.alpha {
                theta + spec.sigma1 * z
            } else {
                let (m, s) = spec.second(theta);
                m + s * z
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn equal_widths_collapse_to_single_gaussian() {
        let spec = GmSpec { variant: GmVariant::CommonMean, alpha: 0.3, sigma1: 1.0, sigma2: 1.0, samples_per_draw: 20_000 };
        let xs = simulate_gm(&spec, 2.0, &mut rng_from_seed(1));
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((m - 2.0).abs() < 4.0 / n.sqrt());
        assert!((v - 1.0).abs() < 0.05);
    }

    #[test]
    fn common_mean_empirical_mean() {
        let spec = GmSpec { samples_per_draw: 10_000, ..GmSpec::common_mean() };
        let xs = simulate_gm(&spec, -1.5, &mut rng_from_seed(2));
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        // marginal sd = sqrt(α σ₁² + (1−α) σ₂²)
        let sd = (0.5f64 * 1.0 + 0.5 * 0.01).sqrt();
        assert!((m + 1.5).abs() < 4.0 * sd / n.sqrt());
    }

    #[test]
    fn bimodal_at_zero_is_symmetric() {
        let spec = GmSpec { samples_per_draw: 10_000, ..GmSpec::bimodal() };
        let xs = simulate_gm(&spec, 0.0, &mut rng_from_seed(3));
        let mut a = xs.clone();
        let mut b: Vec<f64> = simulate_gm(&spec, 0.0, &mut rng_from_seed(4)).iter().map(|x| -x).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample KS statistic
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        let n = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
        // asymptotic p > 0.01 ⇔ D < 1.628 / sqrt(n_eff)
        assert!(d < 1.628 / n.sqrt(), "KS D = {d}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GmSpec::common_mean();
        assert_eq!(simulate_gm(&spec, 1.0, &mut rng_from_seed(8)), simulate_gm(&spec, 1.0, &mut rng_from_seed(8)));
    }

    #[test]
    fn likelihood_matches_closed_form() {
        let spec = GmSpec::common_mean();
        let pdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let expected = 0.5 * pdf(0.3, 0.1, 1.0) + 0.5 * pdf(0.3, 0.1, 0.1);
        assert!((spec.log_likelihood(0.3, 0.1) - expected.ln()).abs() < 1e-12);
    }
}
