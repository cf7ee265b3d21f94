use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Mean-field Gaussian over network weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussianOverWeights {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussianOverWeights {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("weight standard deviations must be positive".into()));
        }
        Ok(DiagGaussianOverWeights { mean, std })
    }

    /// Isotropic `N(0, λ⁻¹ I)`.
    pub fn isotropic(n: usize, precision: f64) -> Self {
        DiagGaussianOverWeights { mean: vec![0.0; n], std: vec![precision.sqrt().recip(); n] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// `KL(q_new ‖ q_old)` between diagonal Gaussians.
///
/// The change in means is weighted by the old precision, so coordinates the
/// previous fit was confident about are expensive to move.
pub fn kl_diag_gaussians(q_new: &DiagGaussianOverWeights, q_old: &DiagGaussianOverWeights) -> Result<f64> {
    check_dim(q_old.len(), q_new.len())?;
    Ok(q_new
        .mean
        .iter()
        .zip(&q_new.std)
        .zip(q_old.mean.iter().zip(&q_old.std))
        .map(|((m1, s1), (m0, s0))| kl_term(*m1, *s1, *m0, *s0))
        .sum())
}

#[inline]
pub(crate) fn kl_term(m_new: f64, s_new: f64, m_old: f64, s_old: f64) -> f64 {
    let r = s_new / s_old;
    let dm = (m_new - m_old) / s_old;
    0.5 * (r * r + dm * dm - 1.0) - r.ln()
}
