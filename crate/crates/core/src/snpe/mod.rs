//! Sequential rounds of propose → simulate → weight → train → extract.

mod cdelfi;
mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{DiagGaussianOverWeights, Distribution, GaussianMixture};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, GruFeaturizer};
use crate::grad::{minimise, Differentiable, TrainConfig};
use crate::guard::{guard_update, guarded_propose, GuardConfig, GuardNet};
use crate::mdn::{remap_weight_prior, Activation, Affine, BayesianMdn, Fit, MdnArchitecture, MdnObjective, TrainingSet};
use crate::rng::{derive_seed, derived_rng, stream};

pub use cdelfi::{cdelfi_round, run_cdelfi, CdelfiRun};
pub use model::{AutapseModel, GlmModel, GmModel, HhModel, Model, Simulation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum CalibrationKernel {
    /// 1 for good simulations, 0 for bad ones.
    #[default]
    BadSim,
    /// `exp(−‖z(x) − z(x_o)‖² / 2τ²)` on standardised, observed features.
    Gaussian { bandwidth: f64 },
}

impl CalibrationKernel {
    /// Kernel value; `scaling` standardises features, `x_o` is the observation.
    pub fn evaluate(&self, x: &FeatureVector, x_o: Option<&FeatureVector>, scaling: &Affine) -> f64 {
        if x.bad {
            return 0.0;
        }
        match (self, x_o) {
            (CalibrationKernel::BadSim, _) | (CalibrationKernel::Gaussian { .. }, None) => 1.0,
            (CalibrationKernel::Gaussian { bandwidth }, Some(o)) => {
                let d2: f64 = (0..x.dim())
                    .filter(|&i| !x.mask[i] && !o.mask[i])
                    .map(|i| ((x.values[i] - o.values[i]) / scaling.scale[i]).powi(2))
                    .sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnpeConfig {
    pub rounds: usize,
    pub sims_per_round: usize,
    /// Mixture components in round 1.
    pub components: usize,
    /// Rounds after which one component is added.
    pub add_component_after: Vec<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Precision λ of the round-1 weight prior `N(0, λ⁻¹ I)`.
    pub prior_precision: f64,
    pub init_std: f64,
    /// First round whose weight prior is the previous round's weight posterior.
    pub continuity_start: usize,
    pub train: TrainConfig,
    pub kernel: CalibrationKernel,
    /// Train on all rounds' simulations instead of the current round only.
    pub retain_data: bool,
    pub guard: Option<GuardConfig>,
    /// Divide importance weights by the guard's survival probability `1 − ĝ`,
    /// so the weighted sample targets the declared prior instead of the
    /// effective prior.
    pub guard_in_weights: bool,
    /// Consecutive out-of-support or guard rejections tolerated per draw.
    pub max_rejections: usize,
    pub gru: Option<GruFeaturizer>,
}

impl Default for SnpeConfig {
    fn default() -> Self {
        SnpeConfig {
            rounds: 5,
            sims_per_round: 1000,
            components: 1,
            add_component_after: Vec::new(),
            hidden: vec![50, 50],
            activation: Activation::Tanh,
            prior_precision: 0.01,
            init_std: crate::mdn::DEFAULT_INIT_STD,
            continuity_start: 3,
            train: TrainConfig::default(),
            kernel: CalibrationKernel::BadSim,
            retain_data: false,
            guard: None,
            guard_in_weights: false,
            max_rejections: 100_000,
            gru: None,
        }
    }
}

impl SnpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.sims_per_round == 0 || self.components == 0 {
            return Err(Error::InvalidArgument("rounds, sims_per_round and components must be at least 1".into()));
        }
        if !(self.prior_precision > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::InvalidArgument("prior_precision and init_std must be positive".into()));
        }
        if let CalibrationKernel::Gaussian { bandwidth } = self.kernel {
            if !(bandwidth > 0.0) {
                return Err(Error::InvalidArgument("kernel bandwidth must be positive".into()));
            }
        }
        self.train.validate()
    }
}

/// The observed data `x_o`.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Features(FeatureVector),
    /// Input sequence for a network with a recurrent front end.
    Sequence(Vec<f64>),
}

impl Observation {
    pub fn from_simulation(sim: Simulation) -> Self {
        match sim.sequence {
            Some(s) => Observation::Sequence(s),
            None => Observation::Features(sim.features),
        }
    }

    /// Network-input features of the observation under `mdn`.
    pub fn network_features(&self, mdn: &BayesianMdn) -> Result<FeatureVector> {
        match self {
            Observation::Features(f) => Ok(f.clone()),
            Observation::Sequence(s) => mdn.encode_sequence(s),
        }
    }

    fn hand_features(&self) -> Option<&FeatureVector> {
        match self {
            Observation::Features(f) => Some(f),
            Observation::Sequence(_) => None,
        }
    }
}

/// `p(θ) / p̃(θ)`; zero outside the prior support.
pub fn importance_weight(prior: &Distribution, proposal: &Distribution, theta: &[f64]) -> Result<f64> {
    let lp = prior.log_pdf(theta)?;
    if lp == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let lq = proposal.log_pdf(theta)?;
    if lq == f64::NEG_INFINITY {
        return Err(Error::DegenerateProposal);
    }
    Ok((lp - lq).exp())
}

/// Scale to mean one.
pub fn normalise_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let n = weights.len() as f64;
    Ok(weights.iter().map(|w| w * n / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub components: usize,
    pub simulations: usize,
    pub bad_simulations: usize,
    pub rejected_proposals: usize,
    pub loss_curve: Vec<f64>,
    pub weight_max: f64,
    /// `(Σw)² / Σw²` over the normalised training weights.
    pub effective_sample_size: f64,
    pub guard_active: bool,
    pub guard_loss: Option<f64>,
}

/// Everything produced by one round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub diagnostics: RoundDiagnostics,
    pub posterior: GaussianMixture,
    pub thetas: Vec<Vec<f64>>,
    pub features: Vec<FeatureVector>,
    /// Normalised importance-times-kernel weights.
    pub weights: Vec<f64>,
}

/// Inference state between rounds.
#[derive(Debug, Clone)]
pub struct RoundState {
    /// Index of the next round, starting at 1.
    pub round: usize,
    pub proposal: Distribution,
    /// `π^(r−1)`, the trained weight posterior of the previous round.
    pub previous_weights: Option<DiagGaussianOverWeights>,
    pub seed: u64,
    pub diagnostics: Vec<RoundDiagnostics>,
    features_frozen: bool,
    retained: TrainingSet,
}

impl RoundState {
    pub fn new(prior: &Distribution, seed: u64) -> Self {
        RoundState {
            round: 1,
            proposal: prior.clone(),
            previous_weights: None,
            seed,
            diagnostics: Vec::new(),
            features_frozen: false,
            retained: TrainingSet::default(),
        }
    }
}

/// Network sized for `model` and `config`, θ standardised by the prior.
pub fn init_mdn(model: &dyn Model, prior: &Distribution, config: &SnpeConfig, seed: u64) -> Result<BayesianMdn> {
    let mut rng = derived_rng(seed, &[stream::INIT]);
    let input_dim = config.gru.map_or(model.feature_dim(), |g| g.hidden);
    let arch = MdnArchitecture {
        input_dim,
        hidden: config.hidden.clone(),
        activation: config.activation,
        components: config.components,
        theta_dim: model.theta_dim(),
    };
    let mdn = BayesianMdn::new(arch, Affine::from_distribution(prior), config.init_std, &mut rng)?;
    match config.gru {
        Some(g) => mdn.with_gru(g, &mut rng),
        None => Ok(mdn),
    }
}

pub(crate) struct RoundData {
    pub thetas: Vec<Vec<f64>>,
    pub sims: Vec<Simulation>,
    pub rejected: usize,
}

/// Draw N parameters (truncated to the prior support and thinned by the
/// guard) and simulate them in parallel, in draw order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propose_and_simulate(
    model: &dyn Model,
    prior: &Distribution,
    proposal: &Distribution,
    guard: Option<&GuardNet>,
    n: usize,
    max_rejections: usize,
    seed: u64,
    round: usize,
) -> Result<RoundData> {
    let mut rng = derived_rng(seed, &[stream::PROPOSAL, round as u64]);
    let reject = |t: &[f64]| {
        if !prior.in_support(t) {
            1.0
        } else {
            guard.map_or(0.0, |g| g.rejection_probability(t))
        }
    };
    let mut thetas = Vec::with_capacity(n);
    let mut rejected = 0;
    for _ in 0..n {
        let (t, r) = guarded_propose(proposal, reject, max_rejections, &mut rng)?;
        thetas.push(t);
        rejected += r;
    }
    let sims = thetas
        .par_iter()
        .enumerate()
        .map(|(i, t)| model.simulate(t, derive_seed(seed, &[stream::SIMULATION, round as u64, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundData { thetas, sims, rejected })
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Prior `π` on network weights for the round about to run.
pub fn weight_prior(state: &RoundState, config: &SnpeConfig, n_weights: usize) -> DiagGaussianOverWeights {
    match &state.previous_weights {
        Some(prev) if state.round >= config.continuity_start => prev.clone(),
        _ => DiagGaussianOverWeights::isotropic(n_weights, config.prior_precision),
    }
}

/// Full-batch variational loss: weighted expected negative log-density under
/// locally reparameterised weight noise, plus `kl_scale · KL(π ‖ π_prev)`.
pub fn svi_loss(mdn: &BayesianMdn, data: &TrainingSet, previous: &DiagGaussianOverWeights, kl_scale: f64, seed: u64) -> Result<f64> {
    let obj = MdnObjective::new(mdn, data, Fit::Variational { prior: previous, kl_scale })?;
    let all: Vec<usize> = (0..data.len()).collect();
    obj.loss(&obj.pack(), &all, seed)
}

/// One round of the algorithm; advances `state` and trains `mdn` in place.
pub fn run_round(
    state: &mut RoundState,
    model: &dyn Model,
    prior: &Distribution,
    x_o: &Observation,
    mdn: &mut BayesianMdn,
    mut guard: Option<&mut GuardNet>,
    config: &SnpeConfig,
) -> Result<RoundReport> {
    config.validate()?;
    let r = state.round;
    let seed = state.seed;
    if r > 1 && config.add_component_after.contains(&(r - 1)) {
        let x = x_o.network_features(mdn)?;
        let map = mdn.add_component(&x, config.init_std, seed)?;
        if let Some(prev) = &state.previous_weights {
            state.previous_weights = Some(remap_weight_prior(prev, &map, config.prior_precision));
        }
    }

    let data =
        propose_and_simulate(model, prior, &state.proposal, guard.as_deref(), config.sims_per_round, config.max_rejections, seed, r)?;
    let bad: Vec<bool> = data.sims.iter().map(|s| s.features.bad).collect();
    let n_bad = bad.iter().filter(|&&b| b).count();

    let mut guard_loss = None;
    if let Some(g) = guard.as_deref_mut() {
        guard_update(g, &data.thetas, &bad, derive_seed(seed, &[stream::GUARD, r as u64]))?;
        if g.active() {
            guard_loss = Some(g.buffer_loss()?);
        }
    }

    if !state.features_frozen && mdn.front_end.is_none() {
        let good: Vec<&FeatureVector> = data.sims.iter().map(|s| &s.features).filter(|f| !f.bad).collect();
        if !good.is_empty() {
            mdn.input_scaling = Affine::from_rows(&good);
            state.features_frozen = true;
        }
    }

    let x_hand = x_o.hand_features();
    let mut raw = Vec::with_capacity(data.thetas.len());
    for (t, s) in data.thetas.iter().zip(&data.sims) {
        let k = config.kernel.evaluate(&s.features, x_hand, &mdn.input_scaling);
        let mut w = if k > 0.0 { importance_weight(prior, &state.proposal, t)? } else { 0.0 };
        if config.guard_in_weights {
            if let Some(g) = guard.as_deref() {
                w /= 1.0 - g.rejection_probability(t);
            }
        }
        raw.push(w * k);
    }
    let weights = normalise_weights(&raw)?;

    let mut set = TrainingSet::default();
    for ((t, s), w) in data.thetas.iter().zip(&data.sims).zip(&weights) {
        match &s.sequence {
            Some(seq) if mdn.front_end.is_some() => set.push_sequence(t.clone(), seq.clone(), *w),
            _ => set.push_features(t.clone(), s.features.clone(), *w),
        }
    }
    if config.retain_data {
        state.retained.extend(set);
        set = state.retained.clone();
    }

    let weight_prior = weight_prior(state, config, mdn.n_weights());
    let kl_scale = 1.0 / set.len() as f64;
    let curve = {
        let obj = MdnObjective::new(mdn, &set, Fit::Variational { prior: &weight_prior, kl_scale })?;
        let mut params = obj.pack();
        let curve = minimise(&obj, &mut params, set.len(), &config.train, derive_seed(seed, &[stream::TRAINING, r as u64]))?;
        let mut trained = mdn.clone();
        obj.unpack(&params, &mut trained);
        *mdn = trained;
        curve
    };

    let posterior = mdn.extract_posterior(&x_o.network_features(mdn)?)?;
    let diagnostics = RoundDiagnostics {
        round: r,
        components: mdn.arch.components,
        simulations: data.thetas.len(),
        bad_simulations: n_bad,
        rejected_proposals: data.rejected,
        loss_curve: curve,
        weight_max: weights.iter().copied().fold(0.0, f64::max),
        effective_sample_size: ess(&weights),
        guard_active: guard.as_deref().is_some_and(GuardNet::active),
        guard_loss,
    };
    state.diagnostics.push(diagnostics.clone());
    state.proposal = Distribution::Mixture(posterior.clone());
    state.previous_weights = Some(mdn.weight_posterior());
    state.round += 1;
    Ok(RoundReport { diagnostics, posterior, thetas: data.thetas, features: data.sims.into_iter().map(|s| s.features).collect(), weights })
}

/// Result of a full inference run.
#[derive(Debug, Clone)]
pub struct SnpeRun {
    pub posterior: GaussianMixture,
    pub mdn: BayesianMdn,
    pub guard: Option<GuardNet>,
    pub state: RoundState,
}

/// All configured rounds; `on_round` sees each report as soon as it exists.
pub fn run_snpe(
    model: &dyn Model,
    prior: &Distribution,
    x_o: &Observation,
    config: &SnpeConfig,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport) -> Result<()>,
) -> Result<SnpeRun> {
    config.validate()?;
    let mut mdn = init_mdn(model, prior, config, seed)?;
    let mut guard = match &config.guard {
        Some(gc) => {
            Some(GuardNet::new(gc.clone(), Affine::from_distribution(prior), &mut derived_rng(seed, &[stream::GUARD, stream::INIT]))?)
        }
        None => None,
    };
    let mut state = RoundState::new(prior, seed);
    let mut posterior = None;
    for _ in 0..config.rounds {
        let report = run_round(&mut state, model, prior, x_o, &mut mdn, guard.as_mut(), config)?;
        on_round(&report)?;
        posterior = Some(report.posterior);
    }
    Ok(SnpeRun { posterior: posterior.expect("at least one round"), mdn, guard, state })
}

#[cfg(test)]
mod tests;
