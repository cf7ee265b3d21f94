use nalgebra::{DMatrix, DVector};

use super::{Distribution, GaussianMixture};
use crate::error::{check_dim, Error, Result};

/// Gaussian in natural parameters: precision `Λ` and shift `η = Λ μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGaussian {
    pub precision: DMatrix<f64>,
    pub shift: DVector<f64>,
}

impl NaturalGaussian {
    pub fn flat(d: usize) -> Self {
        NaturalGaussian { precision: DMatrix::zeros(d, d), shift: DVector::zeros(d) }
    }

    pub fn from_mixture(g: &GaussianMixture) -> Result<Self> {
        if g.n_components() != 1 {
            return Err(Error::InvalidArgument(format!("expected a single Gaussian, got {} components", g.n_components())));
        }
        let precision = g.component_precision(0);
        let shift = &precision * DVector::from_column_slice(&g.means()[0]);
        Ok(NaturalGaussian { precision, shift })
    }

    /// Natural parameters of a prior or proposal; box densities are flat.
    pub fn from_distribution(d: &Distribution) -> Result<Self> {
        match d {
            Distribution::BoxUniform(b) => Ok(NaturalGaussian::flat(b.dim())),
            Distribution::Mixture(m) => NaturalGaussian::from_mixture(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        let sym = (&self.precision + self.precision.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(Error::NonPositivePrecision)?;
        let cov = chol.inverse();
        let mean = chol.solve(&self.shift);
        GaussianMixture::gaussian(mean.iter().copied().collect(), &cov)
    }
}

/// Product of Gaussian densities (sum of natural parameters).
pub fn multiply_gaussians(a: &NaturalGaussian, b: &NaturalGaussian) -> Result<NaturalGaussian> {
    check_dim(a.dim(), b.dim())?;
    Ok(NaturalGaussian { precision: &a.precision + &b.precision, shift: &a.shift + &b.shift })
}

fn divide_natural(num: &NaturalGaussian, den: &NaturalGaussian) -> Result<NaturalGaussian> {
    check_dim(num.dim(), den.dim())?;
    Ok(NaturalGaussian { precision: &num.precision - &den.precision, shift: &num.shift - &den.shift })
}

/// Correct a conditional density fitted under a Gaussian proposal into a
/// posterior under `prior`: `numerator · prior / denominator`.
///
/// Fails with [`Error::NonPositivePrecision`] when the proposal is more
/// precise than the fitted density, instead of clamping.
pub fn divide_gaussian(numerator: &GaussianMixture, denominator: &Distribution, prior: &Distribution) -> Result<GaussianMixture> {
    let num = NaturalGaussian::from_mixture(numerator)?;
    let den = NaturalGaussian::from_distribution(denominator)?;
    let pri = NaturalGaussian::from_distribution(prior)?;
    let out = multiply_gaussians(&divide_natural(&num, &den)?, &pri)?;
    out.to_mixture()?.with_names(numerator.names().to_vec())
}
