use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::densities::GaussianMixture;
use crate::error::{Error, Result};

/// How the rank-deficient second-difference penalty is made invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessAugmentation {
    /// `FᵀF + εI`.
    Ridge(f64),
    None,
}

impl Default for SmoothnessAugmentation {
    fn default() -> Self {
        SmoothnessAugmentation::Ridge(0.5)
    }
}

/// `(d−2) × d` operator with rows `θ_{j−1} − 2θ_j + θ_{j+1}`.
pub fn second_difference(d: usize) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(d.saturating_sub(2), d);
    for j in 0..d.saturating_sub(2) {
        f[(j, j)] = 1.0;
        f[(j, j + 1)] = -2.0;
        f[(j, j + 2)] = 1.0;
    }
    f
}

/// Zero-mean Gaussian with covariance `σ² (FᵀF + augmentation)⁻¹`.
pub fn glm_smoothness_prior(d: usize, sigma: f64, augmentation: SmoothnessAugmentation) -> Result<GaussianMixture> {
    if d < 3 {
        return Err(Error::InvalidArgument("smoothness prior needs d ≥ 3".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("prior scale must be positive".into()));
    }
    let f = second_difference(d);
    let mut ftf = f.transpose() * &f;
    match augmentation {
        SmoothnessAugmentation::Ridge(eps) if eps > 0.0 => {
            for i in 0..d {
                ftf[(i, i)] += eps;
            }
        }
        SmoothnessAugmentation::Ridge(_) => return Err(Error::InvalidArgument("ridge must be positive".into())),
        SmoothnessAugmentation::None => {}
    }
    let chol = ftf.cholesky().ok_or(Error::SingularF)?;
    let cov = chol.inverse() * (sigma * sigma);
    // symmetrise away round-off before the mixture's own factorisation
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianMixture::gaussian(vec![0.0; d], &cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn covariance_is_positive_definite() {
        let g = glm_smoothness_prior(10, 2.0, SmoothnessAugmentation::default()).unwrap();
        let c = g.component_covariance(0);
        assert!((&c - c.transpose()).amax() < 1e-12);
        assert!(c.cholesky().is_some());
    }

    #[test]
    fn unaugmented_operator_is_singular() {
        assert_eq!(glm_smoothness_prior(10, 2.0, SmoothnessAugmentation::None).unwrap_err(), Error::SingularF);
    }

    #[test]
    fn three_dimensional_case_by_hand() {
        // F = [1 −2 1]; FᵀF + I, inverted via adjugate
        let eps = 1.0;
        let m = [[1.0 + eps, -2.0, 1.0], [-2.0, 4.0 + eps, -2.0], [1.0, -2.0, 1.0 + eps]];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let minor = m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
            if (i + j).is_multiple_of(2) {
                minor
            } else {
                -minor
            }
        };
        let sigma: f64 = 1.5;
        let g = glm_smoothness_prior(3, sigma, SmoothnessAugmentation::Ridge(eps)).unwrap();
        let c = g.component_covariance(0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = sigma * sigma * cof(j, i) / det;
                assert!((c[(i, j)] - expected).abs() < 1e-10, "({i},{j}) {} vs {expected}", c[(i, j)]);
            }
        }
    }

    #[test]
    fn samples_are_smoother_than_white_noise() {
        let g = glm_smoothness_prior(10, 2.0, SmoothnessAugmentation::default()).unwrap();
        let sd: Vec<f64> = (0..10).map(|i| g.component_covariance(0)[(i, i)].sqrt()).collect();
        let mut rng = rng_from_seed(3);
        let rough = |v: &[f64]| (1..9).map(|j| (v[j - 1] - 2.0 * v[j] + v[j + 1]).abs()).sum::<f64>();
        let (mut smooth, mut white) = (0.0, 0.0);
        for _ in 0..1000 {
            smooth += rough(&g.sample_one(&mut rng));
            let w: Vec<f64> = sd.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
            white += rough(&w);
        }
        assert!(smooth / white < 0.5, "ratio {}", smooth / white);
    }
}
