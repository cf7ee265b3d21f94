use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::rng::{derived_rng, stream};
use crate::simulators::{logistic, GlmDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_acceptance: f64,
    pub max_rhat: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { chains: 4, warmup: 2000, samples: 5000, target_acceptance: 0.3, max_rhat: 1.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    pub samples: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    /// Over the post-warmup iterations.
    pub acceptance_rate: f64,
    /// Final multiplier of the adapted proposal covariance.
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcResult {
    pub chains: Vec<McmcChain>,
    /// Split-R̂ per dimension.
    pub rhat: Vec<f64>,
}

impl McmcResult {
    pub fn pooled(&self) -> Vec<&[f64]> {
        self.chains.iter().flat_map(|c| c.samples.iter().map(Vec::as_slice)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let all = self.pooled();
        let d = all[0].len();
        (0..d).map(|i| all.iter().map(|s| s[i]).sum::<f64>() / all.len() as f64).collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        let all = self.pooled();
        let m = self.mean();
        let n = all.len() as f64;
        (0..m.len()).map(|i| (all.iter().map(|s| (s[i] - m[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()).collect()
    }

    /// Moment-matched Gaussian summary.
    pub fn to_gaussian(&self) -> Result<GaussianMixture> {
        let all = self.pooled();
        let m = self.mean();
        let d = m.len();
        let mut c = DMatrix::zeros(d, d);
        for s in &all {
            let z = DVector::from_iterator(d, s.iter().zip(&m).map(|(a, b)| a - b));
            c += &z * z.transpose();
        }
        GaussianMixture::gaussian(m, &(c / (all.len() as f64 - 1.0)))
    }
}

/// Gelman–Rubin statistic on chains split in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves.iter().zip(&means).map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn run_chain(
    log_target: &(dyn Fn(&[f64]) -> f64 + Sync),
    init: &[f64],
    cov0: &DMatrix<f64>,
    config: &McmcConfig,
    seed: u64,
    chain: u64,
) -> Result<McmcChain> {
    let d = init.len();
    let mut rng = derived_rng(seed, &[stream::MCMC, chain]);
    let mut x = init.to_vec();
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(Error::InvalidArgument("chain initialised outside the target support".into()));
    }
    let mut log_scale = (2.38f64 / (d as f64).sqrt()).ln();
    let mut chol = cov0.clone().cholesky().ok_or(Error::NonPositivePrecision)?.l();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut out = McmcChain { samples: Vec::with_capacity(config.samples), log_post: Vec::new(), acceptance_rate: 0.0, step_size: 0.0 };
    let mut accepted = 0usize;
    for it in 0..config.warmup + config.samples {
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &chol * z * log_scale.exp();
        let y: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let ly = log_target(&y);
        let ok = ly.is_finite() && rng.random::<f64>().ln() < ly - lp;
        if ok {
            x = y;
            lp = ly;
        }
        if it < config.warmup {
            let a = if ok { 1.0 } else { 0.0 };
            log_scale += (a - config.target_acceptance) / (1.0 + it as f64 / 50.0).powf(0.6);
            history.push(x.clone());
            // re-estimate the proposal shape from the warm-up trajectory
            if it >= 200 && it % 200 == 0 {
                let recent = &history[history.len() / 2..];
                let n = recent.len() as f64;
                let mean: Vec<f64> = (0..d).map(|i| recent.iter().map(|s| s[i]).sum::<f64>() / n).collect();
                let mut c = DMatrix::<f64>::identity(d, d) * 1e-10;
                for s in recent {
                    let v = DVector::from_iterator(d, s.iter().zip(&mean).map(|(a, b)| a - b));
                    c += &v * v.transpose() / (n - 1.0);
                }
                if let Some(ch) = c.cholesky() {
                    chol = ch.l();
                }
            }
        } else {
            accepted += ok as usize;
            out.samples.push(x.clone());
            out.log_post.push(lp);
        }
    }
    out.acceptance_rate = accepted as f64 / config.samples.max(1) as f64;
    out.step_size = log_scale.exp();
    Ok(out)
}

/// Adaptive random-walk Metropolis on `log_target`, one chain per init.
///
/// During warm-up the proposal covariance follows the chain's recent sample
/// covariance and its scale is tuned towards `target_acceptance`; both are
/// frozen for sampling. Fails with [`Error::NonConvergence`] if any split-R̂
/// reaches `max_rhat`.
pub fn adaptive_metropolis(
    log_target: &(dyn Fn(&[f64]) -> f64 + Sync),
    inits: &[Vec<f64>],
    cov0: &DMatrix<f64>,
    config: &McmcConfig,
    seed: u64,
) -> Result<McmcResult> {
    if inits.len() < 2 || config.samples < 4 {
        return Err(Error::InvalidArgument("need at least two chains and four samples".into()));
    }
    let chains = inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| run_chain(log_target, init, cov0, config, seed, c as u64))
        .collect::<Result<Vec<_>>>()?;
    let d = inits[0].len();
    let rhat: Vec<f64> =
        (0..d).map(|i| split_rhat(&chains.iter().map(|c| c.samples.iter().map(|s| s[i]).collect()).collect::<Vec<_>>())).collect();
    let worst = rhat.iter().copied().fold(0.0, f64::max);
    if !(worst < config.max_rhat) {
        return Err(Error::NonConvergence(worst));
    }
    Ok(McmcResult { chains, rhat })
}

/// Laplace approximation of the Bernoulli-GLM posterior by Newton's method.
fn glm_laplace(prior_mean: &DVector<f64>, prior_prec: &DMatrix<f64>, design: &GlmDesign, spikes: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = prior_mean.len();
    let mut beta = prior_mean.clone();
    let mut hess = prior_prec.clone();
    for _ in 0..50 {
        let mut grad = -(prior_prec * (&beta - prior_mean));
        hess = prior_prec.clone();
        for (v, y) in design.rows.iter().zip(spikes) {
            let v = DVector::from_column_slice(v);
            let p = logistic(v.dot(&beta));
            grad += &v * (y - p);
            hess += &v * v.transpose() * (p * (1.0 - p));
        }
        let Some(ch) = hess.clone().cholesky() else { break };
        let delta = ch.solve(&grad);
        beta += &delta;
        if delta.amax() < 1e-10 {
            break;
        }
    }
    let cov = hess.cholesky().map_or_else(|| DMatrix::identity(d, d), |c| c.inverse());
    (beta, cov)
}

/// Reference posterior of the Bernoulli GLM under a Gaussian prior.
///
/// Chains start from overdispersed draws around the Laplace mode and use the
/// Laplace covariance as initial proposal shape.
pub fn glm_reference_mcmc(
    prior: &GaussianMixture,
    design: &GlmDesign,
    spikes: &[f64],
    config: &McmcConfig,
    seed: u64,
) -> Result<McmcResult> {
    if prior.n_components() != 1 {
        return Err(Error::InvalidArgument("reference sampler needs a single Gaussian prior".into()));
    }
    check_dim(design.dim, prior.dim())?;
    check_dim(design.bins(), spikes.len())?;
    let mean = DVector::from_column_slice(&prior.means()[0]);
    let prec = prior.component_precision(0);
    let (mode, cov) = glm_laplace(&mean, &prec, design, spikes);
    let log_target = |b: &[f64]| {
        let z = DVector::from_column_slice(b) - &mean;
        design.log_likelihood(spikes, b) - 0.5 * (z.transpose() * &prec * &z)[(0, 0)]
    };
    let wide = cov.clone().cholesky().ok_or(Error::NonPositivePrecision)?.l() * 2.0;
    let mut rng = derived_rng(seed, &[stream::MCMC, u64::MAX]);
    let inits: Vec<Vec<f64>> = (0..config.chains)
        .map(|_| {
            let z = DVector::from_iterator(mode.len(), (0..mode.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            (&mode + &wide * z).iter().copied().collect()
        })
        .collect();
    adaptive_metropolis(&log_target, &inits, &cov, config, seed)
}
