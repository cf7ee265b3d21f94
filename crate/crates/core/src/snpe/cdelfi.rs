//! Single-Gaussian conditional density estimation with proposal division,
//! the non-Bayesian predecessor of the main loop.

use super::{init_mdn, normalise_weights, propose_and_simulate, Model, Observation, RoundDiagnostics, SnpeConfig};
use crate::densities::{divide_gaussian, Distribution, GaussianMixture};
use crate::error::{Error, Result};
use crate::grad::minimise;
use crate::mdn::{Affine, BayesianMdn, Fit, MdnObjective, TrainingSet};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone)]
pub struct CdelfiRun {
    pub posterior: GaussianMixture,
    pub mdn: BayesianMdn,
    pub proposal: Distribution,
    pub diagnostics: Vec<RoundDiagnostics>,
}

/// One round: simulate from `run.proposal`, fit `q(θ|x)` by maximum
/// likelihood (kernel weights only), and set the next proposal to
/// `q(θ|x_o) p(θ) / p̃(θ)`.
pub fn cdelfi_round(
    run: &mut CdelfiRun,
    round: usize,
    model: &dyn Model,
    prior: &Distribution,
    x_o: &Observation,
    config: &SnpeConfig,
    seed: u64,
) -> Result<()> {
    let data = propose_and_simulate(model, prior, &run.proposal, None, config.sims_per_round, config.max_rejections, seed, round)?;
    if round == 1 {
        let good: Vec<_> = data.sims.iter().map(|s| &s.features).filter(|f| !f.bad).collect();
        if !good.is_empty() && run.mdn.front_end.is_none() {
            run.mdn.input_scaling = Affine::from_rows(&good);
        }
    }
    let x_hand = match x_o {
        Observation::Features(f) => Some(f),
        Observation::Sequence(_) => None,
    };
    let raw: Vec<f64> = data.sims.iter().map(|s| config.kernel.evaluate(&s.features, x_hand, &run.mdn.input_scaling)).collect();
    let weights = normalise_weights(&raw)?;
    let mut set = TrainingSet::default();
    for ((t, s), w) in data.thetas.iter().zip(&data.sims).zip(&weights) {
        match &s.sequence {
            Some(seq) if run.mdn.front_end.is_some() => set.push_sequence(t.clone(), seq.clone(), *w),
            _ => set.push_features(t.clone(), s.features.clone(), *w),
        }
    }
    let obj = MdnObjective::new(&run.mdn, &set, Fit::Point)?;
    let mut params = obj.pack();
    let curve = minimise(&obj, &mut params, set.len(), &config.train, derive_seed(seed, &[stream::TRAINING, round as u64]))?;
    let mut trained = run.mdn.clone();
    obj.unpack(&params, &mut trained);
    run.mdn = trained;

    let fitted = run.mdn.extract_posterior(&x_o.network_features(&run.mdn)?)?;
    let posterior = if round == 1 { fitted } else { divide_gaussian(&fitted, &run.proposal, prior)? };
    run.diagnostics.push(RoundDiagnostics {
        round,
        components: 1,
        simulations: data.thetas.len(),
        bad_simulations: data.sims.iter().filter(|s| s.features.bad).count(),
        rejected_proposals: data.rejected,
        loss_curve: curve,
        weight_max: weights.iter().copied().fold(0.0, f64::max),
        effective_sample_size: super::ess(&weights),
        guard_active: false,
        guard_loss: None,
    });
    run.proposal = Distribution::Mixture(posterior.clone());
    run.posterior = posterior;
    Ok(())
}

/// All rounds of CDE-LFI. Uses `config.components` = 1 regardless of its value.
pub fn run_cdelfi(model: &dyn Model, prior: &Distribution, x_o: &Observation, config: &SnpeConfig, seed: u64) -> Result<CdelfiRun> {
    config.validate()?;
    let single = SnpeConfig { components: 1, ..config.clone() };
    let mdn = init_mdn(model, prior, &single, seed)?;
    let posterior = GaussianMixture::diagonal(prior.mean(), &prior.std())?;
    let mut run = CdelfiRun { posterior, mdn, proposal: prior.clone(), diagnostics: Vec::new() };
    for r in 1..=config.rounds {
        cdelfi_round(&mut run, r, model, prior, x_o, &single, seed)?;
    }
    if run.diagnostics.is_empty() {
        return Err(Error::InvalidArgument("no rounds".into()));
    }
    Ok(run)
}
