use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use rand::Rng as _;
use std::hint::black_box;

use snpekit_core::densities::DiagGaussianOverWeights;
use snpekit_core::features::{FeatureVector, GruFeaturizer};
use snpekit_core::mdn::{Affine, Fit, MdnObjective};
use snpekit_core::rng::rng_from_seed;
use snpekit_core::simulators::hh::{to_log_abs, HH_GROUND_TRUTH};
use snpekit_core::simulators::{simulate_hh, HhSpec};
use snpekit_core::{BayesianMdn, Differentiable, GaussianMixture, MdnArchitecture, TrainingSet};

fn mdn_minibatch(c: &mut Criterion) {
    let mut rng = rng_from_seed(1);
    let (input, d) = (18, 12);
    let arch = MdnArchitecture { input_dim: input, hidden: vec![50, 50], activation: Default::default(), components: 2, theta_dim: d };
    let mdn = BayesianMdn::new(arch, Affine::identity(d), 1e-2, &mut rng).unwrap();
    let mut set = TrainingSet::default();
    for _ in 0..100 {
        let theta = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = FeatureVector::complete((0..input).map(|_| rng.random_range(-1.0..1.0)).collect());
        set.push_features(theta, x, 1.0);
    }
    let prior = DiagGaussianOverWeights::isotropic(mdn.n_weights(), 0.01);
    let batch: Vec<usize> = (0..100).collect();
    for (name, fit) in [("point", Fit::Point), ("variational", Fit::Variational { prior: &prior, kl_scale: 1e-3 })] {
        let obj = MdnObjective::new(&mdn, &set, fit).unwrap();
        let params = obj.pack();
        c.bench_function(&format!("mdn loss+grad, batch 100, {name}"), |b| {
            b.iter(|| obj.loss_and_grad(black_box(&params), &batch, 3).unwrap())
        });
    }
}

fn hh_trace(c: &mut Criterion) {
    let spec = HhSpec::default();
    let theta = to_log_abs(&HH_GROUND_TRUTH);
    let mut seed = 0;
    c.bench_function("hh simulate 240 ms", |b| {
        b.iter_batched(
            || {
                seed += 1;
                rng_from_seed(seed)
            },
            |mut rng| simulate_hh(&spec, black_box(&theta), &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn gru_bptt(c: &mut Criterion) {
    let gru = GruFeaturizer { hidden: 25, input: 2 };
    let mut rng = rng_from_seed(2);
    let w = gru.init(&mut rng);
    let seq: Vec<f64> = (0..480).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g_final = vec![1.0; gru.hidden];
    c.bench_function("gru forward+backward, 240 steps", |b| {
        b.iter(|| {
            let tape = gru.forward_tape(&w, black_box(&seq)).unwrap();
            let mut grad = vec![0.0; w.len()];
            gru.backward(&w, &seq, &tape, &g_final, &mut grad).unwrap();
            grad
        })
    });
}

fn mixture_density(c: &mut Criterion) {
    let d = 12;
    let means = vec![vec![0.0; d], vec![0.5; d]];
    let covs = vec![DMatrix::identity(d, d), DMatrix::identity(d, d) * 0.5];
    let q = GaussianMixture::from_covariances(vec![0.4, 0.6], means, &covs).unwrap();
    let x = vec![0.1; d];
    c.bench_function("mixture log pdf, K 2, d 12", |b| b.iter(|| q.log_pdf(black_box(&x)).unwrap()));
}

criterion_group!(benches, mdn_minibatch, hh_trace, gru_bptt, mixture_density);
criterion_main!(benches);
