use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{log_sum_exp, Distribution, GaussianMixture};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::mdn::Affine;
use crate::rng::{derive_seed, derived_rng, stream};
use crate::snpe::Model;

/// Euclidean distance on standardised features over entries observed in
/// both vectors; infinite for bad simulations.
pub fn abc_distance(x: &FeatureVector, x_o: &FeatureVector, scaling: &Affine) -> f64 {
    if x.bad {
        return f64::INFINITY;
    }
    (0..x.dim())
        .filter(|&i| !x.mask[i] && !x_o.mask[i])
        .map(|i| ((x.values[i] - x_o.values[i]) / scaling.scale[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Feature standardisation from `n` prior-predictive simulations.
pub fn pilot_scaling(model: &dyn Model, prior: &Distribution, n: usize, seed: u64) -> Result<Affine> {
    let mut rng = derived_rng(seed, &[stream::ABC, u64::MAX]);
    let thetas = prior.sample(n, &mut rng);
    let sims = simulate_all(model, &thetas, seed, u64::MAX)?;
    let good: Vec<&FeatureVector> = sims.iter().filter(|f| !f.bad).collect();
    if good.is_empty() {
        return Err(Error::NoAcceptances);
    }
    Ok(Affine::from_rows(&good))
}

fn simulate_all(model: &dyn Model, thetas: &[Vec<f64>], seed: u64, stage: u64) -> Result<Vec<FeatureVector>> {
    thetas
        .par_iter()
        .enumerate()
        .map(|(i, t)| model.simulate(t, derive_seed(seed, &[stream::ABC, stage, i as u64])).map(|s| s.features))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcSamples {
    pub accepted: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub simulations: usize,
}

impl AbcSamples {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.len() as f64 / self.simulations as f64
    }
}

/// Draw `n` parameters from the prior and keep those within `eps` of `x_o`.
pub fn rejection_abc(
    prior: &Distribution,
    model: &dyn Model,
    x_o: &FeatureVector,
    scaling: &Affine,
    eps: f64,
    n: usize,
    seed: u64,
) -> Result<AbcSamples> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let thetas = prior.sample(n, &mut derived_rng(seed, &[stream::ABC, 0]));
    let sims = simulate_all(model, &thetas, seed, 0)?;
    let mut out = AbcSamples { accepted: Vec::new(), distances: Vec::new(), simulations: n };
    for (t, x) in thetas.into_iter().zip(&sims) {
        let d = abc_distance(x, x_o, scaling);
        if d <= eps {
            out.accepted.push(t);
            out.distances.push(d);
        }
    }
    if out.accepted.is_empty() {
        return Err(Error::NoAcceptances);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcConfig {
    pub particles: usize,
    pub eps0: f64,
    /// `ε_i = eps0 · decay^i`.
    pub decay: f64,
    pub max_stages: usize,
    /// Stop once a stage's acceptance rate falls below this.
    pub min_acceptance: f64,
    /// Total simulations, pilot runs included.
    pub budget: usize,
    pub pilot: usize,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig { particles: 1000, eps0: 15.0, decay: 0.9, max_stages: 1000, min_acceptance: 0.01, budget: 25_000, pilot: 1000 }
    }
}

impl SmcConfig {
    pub fn epsilon(&self, stage: usize) -> f64 {
        self.eps0 * self.decay.powi(stage as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 || self.max_stages == 0 {
            return Err(Error::InvalidArgument("SMC needs at least two particles and one stage".into()));
        }
        if !(self.eps0 > 0.0) || !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidArgument("tolerance schedule must be positive and strictly decreasing".into()));
        }
        Ok(())
    }
}

/// Population after the last completed stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SmcState {
    pub particles: Vec<Vec<f64>>,
    /// Normalised to sum one.
    pub weights: Vec<f64>,
    /// Tolerances of the completed stages.
    pub schedule: Vec<f64>,
    pub ess: Vec<f64>,
    pub acceptance: Vec<f64>,
    /// Covariance of the Gaussian perturbation kernel used by the next stage.
    pub kernel_cov: DMatrix<f64>,
    pub simulations: usize,
}

impl SmcState {
    pub fn epsilon(&self) -> f64 {
        *self.schedule.last().expect("at least one stage")
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.particles[0].len();
        let mut m = vec![0.0; d];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += w * b);
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        weighted_cov(&self.particles, &self.weights)
    }

    /// Moment-matched Gaussian summary.
    pub fn to_gaussian(&self) -> Result<GaussianMixture> {
        GaussianMixture::gaussian(self.mean(), &self.covariance())
    }
}

fn weighted_cov(ps: &[Vec<f64>], w: &[f64]) -> DMatrix<f64> {
    let d = ps[0].len();
    let mut mean = DVector::zeros(d);
    for (p, wi) in ps.iter().zip(w) {
        mean += DVector::from_column_slice(p) * *wi;
    }
    let mut c = DMatrix::zeros(d, d);
    for (p, wi) in ps.iter().zip(w) {
        let z = DVector::from_column_slice(p) - &mean;
        c += &z * z.transpose() * *wi;
    }
    c
}

fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

struct Stage {
    particles: Vec<Vec<f64>>,
    used: usize,
}

/// Run candidates in batches of `batch` until `n` are accepted or the budget
/// runs out. Returns `None` on exhaustion.
#[allow(clippy::too_many_arguments)]
fn fill_stage(
    model: &dyn Model,
    x_o: &FeatureVector,
    scaling: &Affine,
    eps: f64,
    n: usize,
    budget: usize,
    seed: u64,
    stage: u64,
    mut propose: impl FnMut(&mut crate::rng::Rng) -> Vec<f64>,
) -> Result<Option<Stage>> {
    let mut rng = derived_rng(seed, &[stream::ABC, stage, u64::MAX - 1]);
    let mut particles = Vec::with_capacity(n);
    let mut used = 0;
    let mut batch_no = 0u64;
    while particles.len() < n {
        let room = budget.saturating_sub(used);
        if room == 0 {
            return Ok(None);
        }
        let size = n.min(room);
        let thetas: Vec<Vec<f64>> = (0..size).map(|_| propose(&mut rng)).collect();
        let sims = simulate_all(model, &thetas, derive_seed(seed, &[stage, batch_no]), stage)?;
        batch_no += 1;
        for (t, x) in thetas.into_iter().zip(&sims) {
            used += 1;
            if abc_distance(x, x_o, scaling) <= eps {
                particles.push(t);
                if particles.len() == n {
                    break;
                }
            }
        }
    }
    Ok(Some(Stage { particles, used }))
}

/// Population Monte-Carlo ABC with a geometric tolerance schedule.
///
/// Stage 0 is rejection-ABC at `ε_0`. Each later stage resamples the previous
/// population, perturbs with `N(0, 2Σ_w)` and reweights by prior over kernel
/// mixture. Stops after `max_stages`, when a stage accepts less than
/// `min_acceptance` of its candidates, or when the budget would be exceeded
/// mid-stage; the last completed population is returned.
pub fn smc_abc(prior: &Distribution, model: &dyn Model, x_o: &FeatureVector, config: &SmcConfig, seed: u64) -> Result<SmcState> {
    config.validate()?;
    let scaling = pilot_scaling(model, prior, config.pilot, seed)?;
    let n = config.particles;
    let mut spent = config.pilot;
    let eps = config.epsilon(0);
    let Some(first) = fill_stage(model, x_o, &scaling, eps, n, config.budget.saturating_sub(spent), seed, 0, |rng| prior.sample_one(rng))?
    else {
        return Err(Error::NoAcceptances);
    };
    spent += first.used;
    let weights = vec![1.0 / n as f64; n];
    let mut state = SmcState {
        kernel_cov: weighted_cov(&first.particles, &weights) * 2.0,
        particles: first.particles,
        weights,
        schedule: vec![eps],
        ess: vec![n as f64],
        acceptance: vec![n as f64 / first.used as f64],
        simulations: spent,
    };

    for stage in 1..config.max_stages {
        if *state.acceptance.last().unwrap() < config.min_acceptance {
            break;
        }
        let eps = config.epsilon(stage);
        let Some(kernel) = state.kernel_cov.clone().cholesky() else {
            return Err(Error::ParticleCollapse(ess(&state.weights)));
        };
        let l = kernel.l();
        let cum: Vec<f64> = state
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let d = state.particles[0].len();
        let propose = |rng: &mut crate::rng::Rng| loop {
            let u: f64 = rng.random::<f64>() * cum[n - 1];
            let j = cum.partition_point(|&c| c < u).min(n - 1);
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
            let t: Vec<f64> = (DVector::from_column_slice(&state.particles[j]) + &l * z).iter().copied().collect();
            if prior.in_support(&t) {
                return t;
            }
        };
        let Some(next) = fill_stage(model, x_o, &scaling, eps, n, config.budget.saturating_sub(spent), seed, stage as u64, propose)? else {
            break;
        };
        spent += next.used;

        // w ∝ p(θ) / Σ_j w_j K(θ | θ_j)
        let prec = kernel.inverse();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln()) - l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_w: Vec<f64> = state.weights.iter().map(|w| w.ln()).collect();
        let old = &state.particles;
        let log_raw: Vec<f64> = next
            .particles
            .par_iter()
            .map(|t| {
                let tv = DVector::from_column_slice(t);
                let terms: Vec<f64> = old
                    .iter()
                    .zip(&log_w)
                    .map(|(p, lw)| {
                        let z = &tv - DVector::from_column_slice(p);
                        lw + log_norm - 0.5 * (z.transpose() * &prec * &z)[(0, 0)]
                    })
                    .collect();
                prior.log_pdf(t).unwrap_or(f64::NEG_INFINITY) - log_sum_exp(&terms)
            })
            .collect();
        let total = log_sum_exp(&log_raw);
        if !total.is_finite() {
            return Err(Error::ParticleCollapse(0.0));
        }
        let weights: Vec<f64> = log_raw.iter().map(|w| (w - total).exp()).collect();
        let e = ess(&weights);
        if e < 2.0 {
            return Err(Error::ParticleCollapse(e));
        }
        state.kernel_cov = weighted_cov(&next.particles, &weights) * 2.0;
        state.particles = next.particles;
        state.weights = weights;
        state.schedule.push(eps);
        state.ess.push(e);
        state.acceptance.push(n as f64 / next.used as f64);
        state.simulations = spent;
    }
    Ok(state)
}
