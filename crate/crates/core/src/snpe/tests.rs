use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::*;
use crate::densities::{kl_diag_gaussians, BoxUniform};
use crate::mdn::mdn_log_loss;
use crate::rng::rng_from_seed;
use crate::test_models::{conjugate, gaussian_prior, LinearGaussian};

fn small_config(rounds: usize, sims: usize, epochs: usize) -> SnpeConfig {
    SnpeConfig {
        rounds,
        sims_per_round: sims,
        hidden: vec![10],
        train: TrainConfig { epochs, ..TrainConfig::default() },
        ..SnpeConfig::default()
    }
}

fn observed(x: f64) -> Observation {
    Observation::Features(FeatureVector::complete(vec![x]))
}

#[test]
fn importance_weight_examples() {
    let prior = Distribution::BoxUniform(BoxUniform::new(vec![-10.0], vec![10.0]).unwrap());
    let proposal = gaussian_prior(1.0);
    let expected = (1.0 / 20.0) / (1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let w = importance_weight(&prior, &proposal, &[0.0]).unwrap();
    assert!((w - expected).abs() < 1e-12);
    assert!((w - 0.1253).abs() < 1e-4);
    assert_eq!(importance_weight(&prior, &proposal, &[11.0]).unwrap(), 0.0);
    for t in [-9.0, 0.3, 4.0] {
        assert!((importance_weight(&prior, &prior, &[t]).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn normalisation_examples() {
    assert_eq!(normalise_weights(&[2.0, 2.0, 2.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    assert_eq!(normalise_weights(&[0.0, 1.0, 3.0]).unwrap(), vec![0.0, 0.75, 2.25]);
    assert!(matches!(normalise_weights(&[0.0, 0.0]), Err(Error::AllZeroWeights)));
}

#[test]
fn kernel_examples() {
    let x_o = FeatureVector::complete(vec![1.0, -2.0]);
    let scaling = Affine { shift: vec![0.0; 2], scale: vec![2.0, 0.5] };
    let k = CalibrationKernel::Gaussian { bandwidth: 0.7 };
    assert_eq!(k.evaluate(&x_o, Some(&x_o), &scaling), 1.0);
    let x = FeatureVector::complete(vec![2.0, -2.0]);
    let expected = (-(0.5f64).powi(2) / (2.0 * 0.49)).exp();
    assert!((k.evaluate(&x, Some(&x_o), &scaling) - expected).abs() < 1e-12);
    // masked entries do not contribute distance
    let mut partial = x.clone();
    partial.set_missing(0);
    assert_eq!(k.evaluate(&partial, Some(&x_o), &scaling), 1.0);
    assert_eq!(k.evaluate(&FeatureVector::bad(2), Some(&x_o), &scaling), 0.0);
    assert_eq!(CalibrationKernel::BadSim.evaluate(&FeatureVector::bad(2), None, &scaling), 0.0);
    assert_eq!(CalibrationKernel::BadSim.evaluate(&x, None, &scaling), 1.0);
}

proptest! {
    #[test]
    fn kernel_stays_in_unit_interval(
        a in proptest::collection::vec(-50.0f64..50.0, 3),
        b in proptest::collection::vec(-50.0f64..50.0, 3),
        tau in 0.01f64..10.0,
    ) {
        let scaling = Affine::identity(3);
        let k = CalibrationKernel::Gaussian { bandwidth: tau };
        let (xa, xb) = (FeatureVector::complete(a), FeatureVector::complete(b));
        let v = k.evaluate(&xa, Some(&xb), &scaling);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(k.evaluate(&xb, Some(&xb), &scaling), 1.0);
    }

    #[test]
    fn kl_penalty_grows_with_mean_shift(j in 0usize..20, d1 in 0.0f64..3.0, extra in 0.0f64..3.0) {
        // all-zero kernel: the loss is the KL term alone
        let model = LinearGaussian { noise: 1.0 };
        let prior = gaussian_prior(1.0);
        let mdn = init_mdn(&model, &prior, &small_config(1, 1, 1), 3).unwrap();
        let previous = mdn.weight_posterior();
        let mut set = TrainingSet::default();
        set.push_features(vec![0.0], FeatureVector::complete(vec![0.0]), 0.0);
        let shifted = |d: f64| {
            let mut m = mdn.clone();
            let j = j % m.n_weights();
            m.mean[j] += d;
            svi_loss(&m, &set, &previous, 0.5, 0).unwrap()
        };
        prop_assert!(shifted(d1 + extra) >= shifted(d1));
    }
}

#[test]
fn svi_loss_kl_term() {
    let model = LinearGaussian { noise: 1.0 };
    let prior = gaussian_prior(1.0);
    let mut mdn = init_mdn(&model, &prior, &small_config(1, 1, 1), 4).unwrap();
    let mut set = TrainingSet::default();
    for i in 0..5 {
        set.push_features(vec![0.1 * i as f64], FeatureVector::complete(vec![0.2 * i as f64]), 1.0);
    }
    let same = mdn.weight_posterior();
    let with_kl = svi_loss(&mdn, &set, &same, 0.25, 9).unwrap();
    let without = svi_loss(&mdn, &set, &same, 0.0, 9).unwrap();
    assert!((with_kl - without).abs() < 1e-12);

    let previous = DiagGaussianOverWeights::isotropic(mdn.n_weights(), 0.01);
    mdn.mean.iter_mut().enumerate().for_each(|(i, w)| *w += 0.01 * i as f64);
    let kl = kl_diag_gaussians(&mdn.weight_posterior(), &previous).unwrap();
    set.weight.iter_mut().for_each(|w| *w = 0.0);
    let n = 1.0 / set.len() as f64;
    let loss = svi_loss(&mdn, &set, &previous, n, 9).unwrap();
    assert!((loss - n * kl).abs() < 1e-9 * kl.max(1.0), "{loss} vs {}", n * kl);
}

#[test]
fn pinned_weight_noise_matches_point_loss() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = gaussian_prior(1.0);
    let mut mdn = init_mdn(&model, &prior, &small_config(1, 1, 1), 5).unwrap();
    mdn.log_std.iter_mut().for_each(|r| *r = -30.0);
    let mut set = TrainingSet::default();
    let mut rng = rng_from_seed(1);
    for _ in 0..20 {
        let t: f64 = rng.sample(StandardNormal);
        let x = model.simulate(&[t], rng.random()).unwrap();
        set.push_features(vec![t], x.features, 1.0);
    }
    let variational = svi_loss(&mdn, &set, &mdn.weight_posterior(), 1.0 / 20.0, 3).unwrap();
    let point = mdn_log_loss(&mdn, &mdn.mean, &set).unwrap();
    assert!((variational - point).abs() < 1e-8, "{variational} vs {point}");
}

#[test]
fn single_round_recovers_conjugate_posterior() {
    let (s0, noise, x_o) = (1.0, 0.5, 0.5);
    let model = LinearGaussian { noise };
    let prior = gaussian_prior(s0);
    let config = SnpeConfig { prior_precision: 0.01, ..small_config(1, 10_000, 40) };
    let run = run_snpe(&model, &prior, &observed(x_o), &config, 11, |_| Ok(())).unwrap();
    let (m, s) = conjugate(s0, noise, x_o);
    let got_m = run.posterior.mean()[0];
    let got_v = run.posterior.covariance()[(0, 0)];
    assert!((got_m - m).abs() < 0.1 * s, "mean {got_m} vs {m}");
    assert!((got_v / (s * s) - 1.0).abs() < 0.2, "var {got_v} vs {}", s * s);
}

#[test]
fn proposal_weights_are_uniform_when_proposal_is_prior() {
    let model = LinearGaussian { noise: 1.0 };
    let prior = gaussian_prior(2.0);
    let mut reports = Vec::new();
    run_snpe(&model, &prior, &observed(0.0), &small_config(1, 50, 2), 1, |r| {
        reports.push(r.weights.clone());
        Ok(())
    })
    .unwrap();
    assert!(reports[0].iter().all(|&w| (w - 1.0).abs() < 1e-12));
}

#[test]
fn proposal_chains_to_serialised_posterior() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = gaussian_prior(1.0);
    let config = small_config(2, 200, 3);
    let mut mdn = init_mdn(&model, &prior, &config, 2).unwrap();
    let mut state = RoundState::new(&prior, 2);
    assert_eq!(state.proposal, prior);
    let report = run_round(&mut state, &model, &prior, &observed(0.3), &mut mdn, None, &config).unwrap();
    let reloaded = GaussianMixture::from_json(&report.posterior.to_json().unwrap()).unwrap();
    assert_eq!(state.proposal, Distribution::Mixture(reloaded));
    assert_eq!(state.round, 2);
    assert_eq!(state.previous_weights.as_ref(), Some(&mdn.weight_posterior()));
    // round 2 is before continuity starts, so the fixed prior applies
    let fixed = weight_prior(&state, &config, mdn.n_weights());
    assert_eq!(fixed, DiagGaussianOverWeights::isotropic(mdn.n_weights(), config.prior_precision));
    state.round = config.continuity_start;
    assert_eq!(weight_prior(&state, &config, mdn.n_weights()), mdn.weight_posterior());
}

#[test]
fn fixed_seed_is_reproducible() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = gaussian_prior(1.0);
    let config = SnpeConfig { add_component_after: vec![1], ..small_config(2, 100, 2) };
    let run = |seed| run_snpe(&model, &prior, &observed(0.2), &config, seed, |_| Ok(())).unwrap().posterior.to_json().unwrap();
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn components_follow_schedule() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = gaussian_prior(1.0);
    let config = SnpeConfig { add_component_after: vec![1, 2], ..small_config(3, 100, 1) };
    let run = run_snpe(&model, &prior, &observed(0.2), &config, 3, |_| Ok(())).unwrap();
    let ks: Vec<usize> = run.state.diagnostics.iter().map(|d| d.components).collect();
    assert_eq!(ks, vec![1, 2, 3]);
    assert_eq!(run.posterior.n_components(), 3);
}

#[test]
fn every_bad_simulation_is_fatal() {
    struct AlwaysBad;
    impl Model for AlwaysBad {
        fn theta_dim(&self) -> usize {
            1
        }
        fn feature_dim(&self) -> usize {
            1
        }
        fn simulate(&self, _: &[f64], _: u64) -> Result<Simulation> {
            Ok(Simulation { features: FeatureVector::bad(1), sequence: None })
        }
    }
    let prior = gaussian_prior(1.0);
    let err = run_snpe(&AlwaysBad, &prior, &observed(0.0), &small_config(1, 20, 1), 0, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::AllZeroWeights));
}

#[test]
fn proposals_respect_prior_support() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = Distribution::BoxUniform(BoxUniform::new(vec![0.0], vec![1.0]).unwrap());
    let wide = gaussian_prior(3.0);
    let data = propose_and_simulate(&model, &prior, &wide, None, 200, 100_000, 4, 1).unwrap();
    assert!(data.thetas.iter().all(|t| prior.in_support(t)));
    assert!(data.rejected > 0);
}

#[test]
fn cdelfi_flat_prior_first_round_is_the_fit() {
    let model = LinearGaussian { noise: 0.5 };
    let prior = Distribution::BoxUniform(BoxUniform::new(vec![-3.0], vec![3.0]).unwrap());
    let config = small_config(1, 300, 3);
    let run = run_cdelfi(&model, &prior, &observed(0.2), &config, 5).unwrap();
    let fitted = run.mdn.extract_posterior(&FeatureVector::complete(vec![0.2])).unwrap();
    assert_eq!(run.posterior, fitted);
}

#[test]
fn cdelfi_division_recovers_conjugate_posterior() {
    let (s0, noise, x_o) = (1.0, 0.5, 0.8);
    let model = LinearGaussian { noise };
    let prior = gaussian_prior(s0);
    let config = small_config(2, 4000, 30);
    let run = run_cdelfi(&model, &prior, &observed(x_o), &config, 6).unwrap();
    let (m, s) = conjugate(s0, noise, x_o);
    assert!((run.posterior.mean()[0] - m).abs() < 0.15 * s);
    assert!((run.posterior.covariance()[(0, 0)] / (s * s) - 1.0).abs() < 0.25);
}
