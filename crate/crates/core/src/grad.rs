//! Gradient substrate shared by every trainable model.
//!
//! Models expose their loss and its gradient with respect to a flat parameter
//! vector through [`Differentiable`]. Gradients are derived by hand per layer;
//! [`finite_difference_grad`] is the independent check used by the tests.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng};

/// A named, shaped region of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with a named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    values: Vec<f64>,
    layout: Vec<Slice>,
}

impl ParamStore {
    /// Build a zero-initialised store whose slices are laid out back to back.
    pub fn zeros<S: Into<String>>(shapes: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let layout: Vec<Slice> = shapes
            .into_iter()
            .map(|(name, shape)| {
                let s = Slice { name: name.into(), offset, shape };
                offset += s.len();
                s
            })
            .collect();
        ParamStore { values: vec![0.0; offset], layout }
    }

    pub fn from_parts(values: Vec<f64>, layout: Vec<Slice>) -> Result<Self> {
        let mut sorted: Vec<&Slice> = layout.iter().collect();
        sorted.sort_by_key(|s| s.offset);
        let mut cursor = 0;
        for s in sorted {
            if s.offset != cursor {
                return Err(Error::InvalidArgument(format!(
                    "slice '{}' starts at {} but previous slice ends at {}",
                    s.name, s.offset, cursor
                )));
            }
            cursor += s.len();
        }
        if cursor != values.len() {
            return Err(Error::DimensionMismatch { expected: cursor, got: values.len() });
        }
        let store = ParamStore { values, layout };
        if !store.is_finite() {
            return Err(Error::InvalidArgument("parameter values must be finite".into()));
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Slice] {
        &self.layout
    }

    pub fn find(&self, name: &str) -> Option<&Slice> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.find(name).map(Slice::range)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.range(name)?;
        Some(&mut self.values[r])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Loss value together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// A scalar loss over a flat parameter vector with an analytic gradient.
///
/// `seed` fixes every internal source of randomness, so the loss is a
/// deterministic function of `params` for a given seed.
pub trait Differentiable {
    type Batch: ?Sized;

    fn loss_and_grad(&self, params: &[f64], batch: &Self::Batch, seed: u64) -> Result<GradReport>;

    fn loss(&self, params: &[f64], batch: &Self::Batch, seed: u64) -> Result<f64> {
        self.loss_and_grad(params, batch, seed).map(|r| r.loss)
    }
}

pub fn value_and_grad<M: Differentiable + ?Sized>(model: &M, params: &ParamStore, batch: &M::Batch, seed: u64) -> Result<GradReport> {
    if !params.is_finite() {
        return Err(Error::InvalidArgument("parameters contain non-finite values".into()));
    }
    let report = model.loss_and_grad(params.values(), batch, seed)?;
    if !report.loss.is_finite() {
        return Err(Error::NonFiniteLoss(report.loss));
    }
    if report.grad.len() != params.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: report.grad.len() });
    }
    Ok(report)
}

/// Central finite differences of the model loss.
pub fn finite_difference_grad<M: Differentiable + ?Sized>(
    model: &M,
    params: &[f64],
    batch: &M::Batch,
    seed: u64,
    step: f64,
) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = model.loss(&p, batch, seed)?;
        p[i] = orig - step;
        let down = model.loss(&p, batch, seed)?;
        p[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest componentwise relative error over components with `|g| > floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs().max(n.abs()) > floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        AdamState { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Rescale `grad` so its Euclidean norm does not exceed `threshold`.
pub fn clip_global_norm(grad: &mut [f64], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Minibatch training schedule shared by every network in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm threshold.
    pub clip: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 500, batch_size: 100, clip: 0.1, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.clip > 0.0) || !(self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument("batch size, clip threshold and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Run Adam over shuffled minibatches of `0..n`, updating `params` in place.
///
/// Returns the mean minibatch loss of every epoch. Adam moments start fresh.
pub fn minimise<M>(model: &M, params: &mut [f64], n: usize, config: &TrainConfig, seed: u64) -> Result<Vec<f64>>
where
    M: Differentiable<Batch = [usize]> + ?Sized,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    let mut adam = AdamState::new(config.adam, params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut derived_rng(seed, &[epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let mut report = model.loss_and_grad(params, idx, derive_seed(seed, &[epoch as u64, b as u64]))?;
            if !report.loss.is_finite() {
                return Err(Error::NonFiniteLoss(report.loss));
            }
            if report.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(f64::NAN));
            }
            clip_global_norm(&mut report.grad, config.clip);
            adam.step(params, &report.grad);
            total += report.loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Quadratic;

    impl Differentiable for Quadratic {
        type Batch = ();
        fn loss_and_grad(&self, p: &[f64], _: &(), _: u64) -> Result<GradReport> {
            Ok(GradReport { loss: 0.5 * p.iter().map(|x| x * x).sum::<f64>(), grad: p.to_vec() })
        }
    }

    struct Constant(f64);

    impl Differentiable for Constant {
        type Batch = ();
        fn loss_and_grad(&self, p: &[f64], _: &(), _: u64) -> Result<GradReport> {
            Ok(GradReport { loss: self.0, grad: vec![0.0; p.len()] })
        }
    }

    struct Exploding;

    impl Differentiable for Exploding {
        type Batch = ();
        fn loss_and_grad(&self, p: &[f64], _: &(), _: u64) -> Result<GradReport> {
            Ok(GradReport { loss: f64::NAN, grad: vec![0.0; p.len()] })
        }
    }

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::zeros([("theta", vec![values.len()])]);
        s.values_mut().copy_from_slice(values);
        s
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let r = value_and_grad(&Constant(3.5), &store(&[1.0, -2.0]), &(), 0).unwrap();
        assert_eq!(r.grad, vec![0.0, 0.0]);
        let fd = finite_difference_grad(&Constant(3.5), &[1.0, -2.0], &(), 0, 1e-5).unwrap();
        assert!(fd.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn quadratic_gradient_is_identity() {
        let r = value_and_grad(&Quadratic, &store(&[1.0, 2.0]), &(), 0).unwrap();
        assert_eq!(r.grad, vec![1.0, 2.0]);
        assert_eq!(r.loss, 2.5);
        let fd = finite_difference_grad(&Quadratic, &[1.0, 2.0], &(), 0, 1e-5).unwrap();
        assert!(max_relative_error(&r.grad, &fd, 1e-6) < 1e-8);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let err = value_and_grad(&Exploding, &store(&[1.0]), &(), 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)));
    }

    #[test]
    fn layout_must_tile_the_vector() {
        let layout = vec![Slice { name: "a".into(), offset: 0, shape: vec![2] }, Slice { name: "b".into(), offset: 3, shape: vec![1] }];
        assert!(ParamStore::from_parts(vec![0.0; 4], layout).is_err());
        let layout = vec![Slice { name: "a".into(), offset: 0, shape: vec![2, 2] }, Slice { name: "b".into(), offset: 4, shape: vec![1] }];
        let s = ParamStore::from_parts(vec![0.0; 5], layout).unwrap();
        assert_eq!(s.range("b"), Some(4..5));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(AdamConfig::default(), 1);
        st.step(&mut p, &[1.0]);
        // m_hat = 1, v_hat = 1 after bias correction
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![0.3, -1.2, 4.0];
        let mut st = AdamState::new(AdamConfig::default(), 3);
        for _ in 0..10 {
            st.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![0.3, -1.2, 4.0]);
    }

    #[test]
    fn adam_constant_gradient_drifts_monotonically() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(AdamConfig::default(), 2);
        let mut prev = p.clone();
        for _ in 0..50 {
            st.step(&mut p, &[2.0, -0.5]);
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev = p.clone();
        }
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![0.05, 0.05];
        clip_global_norm(&mut g, 0.1);
        assert_eq!(g, vec![0.05, 0.05]);

        let mut g = vec![3.0, 4.0];
        clip_global_norm(&mut g, 0.1);
        assert!((g[0] - 0.06).abs() < 1e-15 && (g[1] - 0.08).abs() < 1e-15);

        let mut g = vec![0.0, 0.0];
        clip_global_norm(&mut g, 0.1);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_threshold(
            g in prop::collection::vec(-1e6f64..1e6, 1..40),
            t in 1e-6f64..10.0,
        ) {
            let mut g = g;
            clip_global_norm(&mut g, t);
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n <= t + 1e-12);
        }

        #[test]
        fn adam_zero_gradient_fixed_point_prop(p in prop::collection::vec(-10f64..10.0, 1..10)) {
            let mut q = p.clone();
            let mut st = AdamState::new(AdamConfig::default(), q.len());
            let zeros = vec![0.0; q.len()];
            st.step(&mut q, &zeros);
            prop_assert_eq!(q, p);
        }
    }
}
