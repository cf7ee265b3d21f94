use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{log_sum_exp, LN_2PI};
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Weighted sum of Gaussians with covariances stored as lower Cholesky factors.
///
/// This is both the posterior format written to disk and the proposal prior
/// handed to the next round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    // row-major d×d lower-triangular factors
    chol: Vec<Vec<f64>>,
    names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    dim: usize,
    names: Vec<String>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    cholesky: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MixtureFile> for GaussianMixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        let d = f.dim;
        let mut chol = Vec::with_capacity(f.cholesky.len());
        for rows in f.cholesky {
            check_dim(d, rows.len())?;
            let mut flat = Vec::with_capacity(d * d);
            for r in rows {
                check_dim(d, r.len())?;
                flat.extend(r);
            }
            chol.push(flat);
        }
        GaussianMixture::new(f.weights, f.means, chol, f.names)
    }
}

impl From<GaussianMixture> for MixtureFile {
    fn from(m: GaussianMixture) -> Self {
        let d = m.dim();
        MixtureFile {
            dim: d,
            cholesky: m.chol.iter().map(|c| c.chunks(d).map(<[f64]>::to_vec).collect()).collect(),
            names: m.names,
            weights: m.weights,
            means: m.means,
        }
    }
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("theta{i}")).collect()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl GaussianMixture {
    /// `chol[k]` is the row-major lower-triangular Cholesky factor of component k.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, chol: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        check_dim(k, means.len())?;
        check_dim(k, chol.len())?;
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("mixture dimension must be positive".into()));
        }
        let names = if names.is_empty() { default_names(d) } else { names };
        check_dim(d, names.len())?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        for (mu, l) in means.iter().zip(&chol) {
            check_dim(d, mu.len())?;
            check_dim(d * d, l.len())?;
            if mu.iter().chain(l.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteOutput);
            }
            for i in 0..d {
                if !(l[i * d + i] > 0.0) {
                    return Err(Error::InvalidArgument("Cholesky diagonal entries must be positive".into()));
                }
                if (i + 1..d).any(|j| l[i * d + j] != 0.0) {
                    return Err(Error::InvalidArgument("Cholesky factor must be lower-triangular".into()));
                }
            }
        }
        Ok(GaussianMixture { weights, means, chol, names })
    }

    /// Build from full covariance matrices.
    pub fn from_covariances(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: &[DMatrix<f64>]) -> Result<Self> {
        let chol = covs
            .iter()
            .map(|c| {
                let l = c.clone().cholesky().ok_or(Error::NonPositivePrecision)?.l();
                Ok(row_major(&l))
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(weights, means, chol, Vec::new())
    }

    pub fn gaussian(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        GaussianMixture::from_covariances(vec![1.0], vec![mean], std::slice::from_ref(cov))
    }

    /// Diagonal Gaussian with the given standard deviations.
    pub fn diagonal(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        let d = mean.len();
        check_dim(d, std.len())?;
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            l[i * d + i] = std[i];
        }
        GaussianMixture::new(vec![1.0], vec![mean], vec![l], Vec::new())
    }

    pub fn standard_normal(d: usize) -> Self {
        GaussianMixture::diagonal(vec![0.0; d], &vec![1.0; d]).expect("valid standard normal")
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        check_dim(self.dim(), names.len())?;
        self.names = names;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cholesky_factor(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.chol[k])
    }

    pub fn component_covariance(&self, k: usize) -> DMatrix<f64> {
        let l = self.cholesky_factor(k);
        &l * l.transpose()
    }

    pub fn component_precision(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim();
        let linv = self.cholesky_factor(k).solve_lower_triangular(&DMatrix::identity(d, d)).expect("positive diagonal");
        linv.transpose() * linv
    }

    /// Per-component `ln α_k + ln N(x | μ_k, Σ_k)`.
    pub fn component_log_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        check_dim(d, x.len())?;
        let mut z = vec![0.0; d];
        Ok((0..self.n_components())
            .map(|k| {
                let l = &self.chol[k];
                let mu = &self.means[k];
                let mut logdet = 0.0;
                let mut quad = 0.0;
                for i in 0..d {
                    let mut s = x[i] - mu[i];
                    for j in 0..i {
                        s -= l[i * d + j] * z[j];
                    }
                    z[i] = s / l[i * d + i];
                    quad += z[i] * z[i];
                    logdet += l[i * d + i].ln();
                }
                self.weights[k].ln() - 0.5 * quad - logdet - 0.5 * d as f64 * LN_2PI
            })
            .collect())
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.component_log_terms(x)?))
    }

    fn pick_component(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        // rounding in the cumulative sum: fall back to the last component with mass
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let k = self.pick_component(rng);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.chol[k];
        (0..d).map(|i| self.means[k][i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>()).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for i in 0..d {
                m[i] += w * mu[i];
            }
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = DVector::from_vec(self.mean());
        let mut c = DMatrix::zeros(d, d);
        for k in 0..self.n_components() {
            let mu = DVector::from_column_slice(&self.means[k]);
            let diff = &mu - &m;
            c += (self.component_covariance(k) + &diff * diff.transpose()) * self.weights[k];
        }
        c
    }

    /// Single Gaussian with the mixture's mean and covariance.
    pub fn moment_matched(&self) -> Result<GaussianMixture> {
        let cov = self.covariance();
        GaussianMixture::gaussian(self.mean(), &cov)?.with_names(self.names.clone())
    }

    /// Marginal over the listed coordinates (in the given order).
    pub fn marginal(&self, dims: &[usize]) -> Result<GaussianMixture> {
        let d = self.dim();
        if dims.is_empty() || dims.iter().any(|&i| i >= d) {
            return Err(Error::InvalidArgument(format!("marginal dimensions {dims:?} out of range")));
        }
        let covs: Vec<DMatrix<f64>> = (0..self.n_components())
            .map(|k| {
                let full = self.component_covariance(k);
                DMatrix::from_fn(dims.len(), dims.len(), |a, b| full[(dims[a], dims[b])])
            })
            .collect();
        let means = self.means.iter().map(|mu| dims.iter().map(|&i| mu[i]).collect()).collect();
        let names = dims.iter().map(|&i| self.names[i].clone()).collect();
        GaussianMixture::from_covariances(self.weights.clone(), means, &covs)?.with_names(names)
    }

    pub fn marginal_cdf(&self, dim: usize, x: f64) -> f64 {
        let d = self.dim();
        (0..self.n_components())
            .map(|k| {
                let sd = (0..=dim).map(|j| self.chol[k][dim * d + j].powi(2)).sum::<f64>().sqrt();
                self.weights[k] * std_normal_cdf((x - self.means[k][dim]) / sd)
            })
            .sum()
    }

    /// Quantile of the one-dimensional marginal, by bisection on the CDF.
    pub fn marginal_quantile(&self, dim: usize, p: f64) -> f64 {
        let d = self.dim();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..self.n_components() {
            let sd = (0..=dim).map(|j| self.chol[k][dim * d + j].powi(2)).sum::<f64>().sqrt();
            lo = lo.min(self.means[k][dim] - 40.0 * sd);
            hi = hi.max(self.means[k][dim] + 40.0 * sd);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.marginal_cdf(dim, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Highest-density point found by fixed-point iteration started at every
    /// component mean.
    pub fn mode(&self) -> Vec<f64> {
        let d = self.dim();
        let precisions: Vec<DMatrix<f64>> = (0..self.n_components()).map(|k| self.component_precision(k)).collect();
        let mut best = self.means[0].clone();
        let mut best_lp = f64::NEG_INFINITY;
        for start in &self.means {
            let mut x = start.clone();
            for _ in 0..500 {
                let terms = self.component_log_terms(&x).expect("dimension checked");
                let lse = log_sum_exp(&terms);
                let mut a = DMatrix::zeros(d, d);
                let mut b = DVector::zeros(d);
                for k in 0..self.n_components() {
                    let r = (terms[k] - lse).exp();
                    if r == 0.0 {
                        continue;
                    }
                    a += &precisions[k] * r;
                    b += &precisions[k] * DVector::from_column_slice(&self.means[k]) * r;
                }
                let next = match a.clone().cholesky() {
                    Some(c) => c.solve(&b),
                    None => break,
                };
                let step: f64 = next.iter().zip(&x).map(|(n, o)| (n - o).abs()).fold(0.0, f64::max);
                x = next.iter().copied().collect();
                if step < 1e-12 {
                    break;
                }
            }
            let lp = self.log_pdf(&x).expect("dimension checked");
            if lp > best_lp {
                best_lp = lp;
                best = x;
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn two_component() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 0.5], vec![2.0, -1.0]],
            vec![vec![1.0, 0.0, 0.3, 0.8], vec![0.5, 0.0, -0.2, 1.5]],
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_zero() {
        let g = GaussianMixture::standard_normal(1);
        assert!((g.log_pdf(&[0.0]).unwrap() + 0.5 * LN_2PI).abs() < 1e-14);
        assert!((g.log_pdf(&[0.0]).unwrap() + 0.9189).abs() < 1e-4);
        let g3 = GaussianMixture::standard_normal(3);
        assert!((g3.log_pdf(&[0.0; 3]).unwrap() + 3.0 * 0.5 * LN_2PI).abs() < 1e-13);
    }

    #[test]
    fn identical_components_collapse() {
        let single = GaussianMixture::diagonal(vec![0.4], &[1.3]).unwrap();
        let double = GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.4], vec![0.4]], vec![vec![1.3], vec![1.3]], Vec::new()).unwrap();
        for x in [-3.0, 0.0, 0.4, 2.2] {
            assert!((single.log_pdf(&[x]).unwrap() - double.log_pdf(&[x]).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_weights_only_sample_first_component() {
        let m = GaussianMixture::new(vec![1.0, 0.0], vec![vec![-50.0], vec![50.0]], vec![vec![1.0], vec![1.0]], Vec::new()).unwrap();
        let s = m.sample(2000, &mut rng_from_seed(5));
        assert!(s.iter().all(|x| x[0] < 0.0));
    }

    #[test]
    fn sampling_matches_mean_and_is_reproducible() {
        let m = two_component();
        let n = 100_000;
        let s = m.sample(n, &mut rng_from_seed(9));
        let cov = m.covariance();
        for i in 0..2 {
            let emp = s.iter().map(|x| x[i]).sum::<f64>() / n as f64;
            let bound = 4.0 * cov[(i, i)].sqrt() / (n as f64).sqrt();
            assert!((emp - m.mean()[i]).abs() < bound, "dim {i}: {emp} vs {}", m.mean()[i]);
        }
        assert_eq!(m.sample(10, &mut rng_from_seed(1)), m.sample(10, &mut rng_from_seed(1)));
    }

    #[test]
    fn normalises_on_a_grid() {
        let m = two_component();
        let (lo, hi, n) = (-9.0, 9.0, 361);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + h * i as f64, lo + h * j as f64];
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                total += wi * wj * m.log_pdf(&x).unwrap().exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
    }

    #[test]
    fn no_overflow_for_large_magnitudes() {
        let m = GaussianMixture::new(vec![0.5, 0.5], vec![vec![1e3], vec![-1e3]], vec![vec![0.1], vec![0.1]], Vec::new()).unwrap();
        let v = m.log_pdf(&[0.0]).unwrap();
        assert!(v.is_finite() || v == f64::NEG_INFINITY);
        assert!(m.log_pdf(&[1e3]).unwrap().is_finite());
        assert!(m.log_pdf(&[-999.0]).unwrap().is_finite());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let m = two_component().with_names(vec!["a".into(), "b".into()]).unwrap();
        let back = GaussianMixture::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_rejects_bad_weights() {
        let s = r#"{"dim":1,"names":["x"],"weights":[0.5,0.6],"means":[[0],[1]],"cholesky":[[[1]],[[1]]]}"#;
        assert!(GaussianMixture::from_json(s).is_err());
        let s = r#"{"dim":1,"names":["x"],"weights":[1.0],"means":[[0]],"cholesky":[[[-1]]]}"#;
        assert!(GaussianMixture::from_json(s).is_err());
    }

    #[test]
    fn marginal_quantiles_of_standard_normal() {
        let g = GaussianMixture::standard_normal(2);
        assert!((g.marginal_quantile(1, 0.975) - 1.959964).abs() < 1e-5);
        assert!(g.marginal_quantile(0, 0.5).abs() < 1e-9);
    }

    #[test]
    fn mode_of_bimodal_mixture() {
        let m = GaussianMixture::new(vec![0.3, 0.7], vec![vec![-3.0], vec![3.0]], vec![vec![0.5], vec![0.5]], Vec::new()).unwrap();
        assert!((m.mode()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn marginal_of_gaussian_drops_coordinates() {
        let m = two_component();
        let marg = m.marginal(&[1]).unwrap();
        let full_cov = m.component_covariance(1);
        assert!((marg.component_covariance(1)[(0, 0)] - full_cov[(1, 1)]).abs() < 1e-12);
        assert!((marg.marginal_cdf(0, 0.3) - m.marginal_cdf(1, 0.3)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn json_round_trip_prop(
            w in 0.01f64..0.99, m0 in -50f64..50.0, m1 in -50f64..50.0,
            l0 in 0.01f64..10.0, l1 in 0.01f64..10.0,
        ) {
            let g = GaussianMixture::new(
                vec![w, 1.0 - w], vec![vec![m0], vec![m1]], vec![vec![l0], vec![l1]], Vec::new(),
            );
            if let Ok(g) = g {
                let back = GaussianMixture::from_json(&g.to_json().unwrap()).unwrap();
                prop_assert_eq!(g, back);
            }
        }
    }
}
