use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Uniform density on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxUniform {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxUniform {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxUniform { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lower.len(), self.upper.len())?;
        if self.lower.is_empty() {
            return Err(Error::InvalidArgument("box prior must have at least one dimension".into()));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidArgument(format!("box bounds must satisfy lower < upper (dimension {i}: {l} vs {u})")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).ln()).sum()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(if self.contains(x) { -self.log_volume() } else { f64::NEG_INFINITY })
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) / 12f64.sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn log_pdf_inside_and_outside() {
        let b = BoxUniform::new(vec![-10.0], vec![10.0]).unwrap();
        assert!((b.log_pdf(&[0.0]).unwrap() - (1.0f64 / 20.0).ln()).abs() < 1e-12);
        assert!((b.log_pdf(&[0.0]).unwrap() + 2.9957).abs() < 1e-4);
        assert_eq!(b.log_pdf(&[11.0]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(b.log_pdf(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxUniform::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxUniform::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn empirical_mean_of_unit_box() {
        let b = BoxUniform::new(vec![0.0], vec![1.0]).unwrap();
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let m = b.sample(n, &mut rng).iter().map(|x| x[0]).sum::<f64>() / n as f64;
        // 4σ/√n with σ = 1/√12
        assert!((m - 0.5).abs() < 4.0 * (1.0 / 12f64.sqrt()) / (n as f64).sqrt());
        assert!((m - 0.5).abs() < 0.006);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let b = BoxUniform::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let a = b.sample(50, &mut rng_from_seed(3));
        let c = b.sample(50, &mut rng_from_seed(3));
        assert_eq!(a, c);
    }
}
