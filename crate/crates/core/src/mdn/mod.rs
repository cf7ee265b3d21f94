//! Mixture-density networks with mean-field Gaussian weights.
//!
//! The network maps (standardised) features to the parameters of a Gaussian
//! mixture over standardised θ. Each component head outputs a logit, a mean
//! and the upper-triangular factor `U` of its precision `Σ⁻¹ = UᵀU`, whose
//! diagonal passes through a softplus.

mod checkpoint;
pub(crate) mod net;
mod objective;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{DiagGaussianOverWeights, Distribution, GaussianMixture};
use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureVector, GruFeaturizer};
use crate::grad::Slice;
use crate::rng::{derived_rng, stream, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use objective::{mdn_log_loss, Fit, MdnObjective, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub components: usize,
    pub theta_dim: usize,
}

impl MdnArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.theta_dim == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument("MDN needs at least one input, component and parameter".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    /// Outputs per component: logit, mean, triangular precision factor.
    pub fn block_size(&self) -> usize {
        let d = self.theta_dim;
        1 + d + d * (d + 1) / 2
    }

    pub fn head_dim(&self) -> usize {
        self.components * self.block_size()
    }

    /// `(out, in)` per layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.head_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_weights(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Named slices `layer{l}.w` (`out × in`) and `layer{l}.b` of the weight vector.
    pub fn weight_layout(&self) -> Vec<Slice> {
        let mut off = 0;
        let mut out = Vec::new();
        for (l, (o, i)) in self.layer_shapes().into_iter().enumerate() {
            out.push(Slice { name: format!("layer{l}.w"), offset: off, shape: vec![o, i] });
            off += o * i;
            out.push(Slice { name: format!("layer{l}.b"), offset: off, shape: vec![o] });
            off += o;
        }
        out
    }
}

/// Elementwise `(v − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Affine { shift: vec![0.0; n], scale: vec![1.0; n] }
    }

    pub fn from_distribution(d: &Distribution) -> Self {
        Affine { shift: d.mean(), scale: d.std() }
    }

    /// Column mean and sd of the rows, skipping masked entries; sd floored
    /// at `1e-8 · (1 + |mean|)` so constant columns stay finite.
    pub fn from_rows(rows: &[&FeatureVector]) -> Self {
        let n = rows.first().map_or(0, |r| r.dim());
        let mut shift = vec![0.0; n];
        let mut scale = vec![1.0; n];
        for j in 0..n {
            let vals: Vec<f64> = rows.iter().filter(|r| !r.mask[j]).map(|r| r.values[j]).collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            shift[j] = m;
            scale[j] = v.sqrt().max(1e-8 * (1.0 + m.abs()));
        }
        Affine { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn log_abs_det(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// Recurrent feature extractor trained jointly with the MDN.
#[derive(Debug, Clone, PartialEq)]
pub struct GruFrontEnd {
    pub gru: GruFeaturizer,
    pub weights: Vec<f64>,
}

/// MDN with a mean-field Gaussian `N(φ_m, diag(φ_s²))` over its weights.
///
/// `log_std` stores `ρ = ln φ_s`. Imputation values and front-end weights are
/// point estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianMdn {
    pub arch: MdnArchitecture,
    pub theta_scaling: Affine,
    pub input_scaling: Affine,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub imputation: Vec<f64>,
    pub front_end: Option<GruFrontEnd>,
}

pub const DEFAULT_INIT_STD: f64 = 1e-2;
/// Scale of the jitter on a copied head's mean outputs.
const MEAN_OFFSET_NOISE: f64 = 1e-2;
/// Ratio of initial precision factors of consecutive components.
const COMPONENT_WIDTH_RATIO: f64 = 3.0;

impl BayesianMdn {
    /// Fan-in scaled uniform weight means, `φ_s = init_std`. Biases are zero
    /// except the precision diagonals, which give component k a width `3⁻ᵏ`.
    pub fn new(arch: MdnArchitecture, theta_scaling: Affine, init_std: f64, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        check_dim(arch.theta_dim, theta_scaling.dim())?;
        if !(init_std > 0.0) {
            return Err(Error::InvalidArgument("initial weight std must be positive".into()));
        }
        let mut mean = Vec::with_capacity(arch.n_weights());
        for (o, i) in arch.layer_shapes() {
            let a = 1.0 / (i as f64).sqrt();
            mean.extend((0..o * i).map(|_| rng.random_range(-a..a)));
            mean.extend(std::iter::repeat_n(0.0, o));
        }
        // components start at different widths so they do not train in lockstep
        let bias0 = arch.n_weights() - arch.head_dim();
        let bs = arch.block_size();
        let d = arch.theta_dim;
        for k in 1..arch.components {
            let target = COMPONENT_WIDTH_RATIO.powi(k as i32);
            let raw = target.exp_m1().ln() - net::DIAG_OFFSET;
            let mut t = 1 + d;
            for r in 0..d {
                mean[bias0 + k * bs + t] = raw;
                t += d - r;
            }
        }
        let n = mean.len();
        Ok(BayesianMdn {
            input_scaling: Affine::identity(arch.input_dim),
            imputation: vec![0.0; arch.input_dim],
            arch,
            theta_scaling,
            mean,
            log_std: vec![init_std.ln(); n],
            front_end: None,
        })
    }

    /// Attach a recurrent front end whose hidden state feeds the MDN input.
    pub fn with_gru(mut self, gru: GruFeaturizer, rng: &mut Rng) -> Result<Self> {
        check_dim(self.arch.input_dim, gru.hidden)?;
        self.front_end = Some(GruFrontEnd { gru, weights: gru.init(rng) });
        Ok(self)
    }

    pub fn n_weights(&self) -> usize {
        self.mean.len()
    }

    pub fn weight_posterior(&self) -> DiagGaussianOverWeights {
        DiagGaussianOverWeights { mean: self.mean.clone(), std: self.log_std.iter().map(|r| r.exp()).collect() }
    }

    /// Standardise observed entries and substitute `c_i` for missing ones.
    pub fn prepare_input(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        check_dim(self.arch.input_dim, x.dim())?;
        Ok(x.values
            .iter()
            .zip(&x.mask)
            .enumerate()
            .map(|(i, (v, &m))| if m { self.imputation[i] } else { (v - self.input_scaling.shift[i]) / self.input_scaling.scale[i] })
            .collect())
    }

    /// Features produced by the recurrent front end for a flattened sequence.
    pub fn encode_sequence(&self, seq: &[f64]) -> Result<FeatureVector> {
        let fe = self.front_end.as_ref().ok_or_else(|| Error::InvalidArgument("network has no recurrent front end".into()))?;
        Ok(FeatureVector::complete(fe.gru.forward(&fe.weights, seq)?))
    }

    /// Mixture over θ produced by weights `w` at features `x`.
    pub fn forward(&self, w: &[f64], x: &FeatureVector) -> Result<GaussianMixture> {
        check_dim(self.n_weights(), w.len())?;
        let tape = net::forward(&self.arch, w, None, self.prepare_input(x)?, None);
        if tape.out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
        self.head_to_mixture(&tape.out)
    }

    /// Posterior at `x_o` under the mean weights `φ_m`.
    pub fn extract_posterior(&self, x_o: &FeatureVector) -> Result<GaussianMixture> {
        self.forward(&self.mean, x_o)
    }

    /// `ln q(θ | x)` under the mean weights.
    pub fn log_q(&self, theta: &[f64], x: &FeatureVector) -> Result<f64> {
        check_dim(self.arch.theta_dim, theta.len())?;
        let tape = net::forward(&self.arch, &self.mean, None, self.prepare_input(x)?, None);
        let y = self.theta_scaling.apply(theta);
        Ok(net::head_log_q(&self.arch, &tape.out, &y, None) - self.theta_scaling.log_abs_det())
    }

    /// One weight vector `w ~ N(φ_m, φ_s²)`.
    pub fn sample_network(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean.iter().zip(&self.log_std).map(|(m, r)| m + r.exp() * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Single-draw local-reparameterisation estimate of `⟨ln q_w(θ | x)⟩_π`.
    pub fn sample_log_q(&self, theta: &[f64], x: &FeatureVector, rng: &mut Rng) -> Result<f64> {
        check_dim(self.arch.theta_dim, theta.len())?;
        let s2: Vec<f64> = self.log_std.iter().map(|r| (2.0 * r).exp()).collect();
        let tape = net::forward(&self.arch, &self.mean, Some(&s2), self.prepare_input(x)?, Some(rng));
        let y = self.theta_scaling.apply(theta);
        Ok(net::head_log_q(&self.arch, &tape.out, &y, None) - self.theta_scaling.log_abs_det())
    }

    fn head_to_mixture(&self, out: &[f64]) -> Result<GaussianMixture> {
        let d = self.arch.theta_dim;
        let comps = net::components(&self.arch, out);
        let logits: Vec<f64> = comps.iter().map(|c| c.logit).collect();
        let lse = crate::densities::log_sum_exp(&logits);
        let weights: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.theta_scaling.scale));
        let mut means = Vec::with_capacity(comps.len());
        let mut covs = Vec::with_capacity(comps.len());
        for c in &comps {
            means.push(c.mean.iter().zip(&self.theta_scaling.shift).zip(&self.theta_scaling.scale).map(|((m, a), s)| a + s * m).collect());
            let u = DMatrix::from_row_slice(d, d, &c.u);
            let u_inv = u.solve_upper_triangular(&DMatrix::identity(d, d)).ok_or(Error::NonPositivePrecision)?;
            let cov_y = &u_inv * u_inv.transpose();
            covs.push(&scale * cov_y * &scale);
        }
        GaussianMixture::from_covariances(weights, means, &covs)
    }

    /// Grow the mixture by one component.
    ///
    /// The new head copies the head with the largest weight at `x_o`, with
    /// N(0, 10⁻⁴) noise on its mean rows and biases, a logit offset making its
    /// weight `1/(K+1)` at `x_o` and a precision diagonal 3 times larger there.
    /// Both the copied head and the new one get `φ_s = init_std`. Returns, for
    /// each entry of the new weight vector, the old index whose noise and
    /// weight prior carry over (`None` for both heads).
    pub fn add_component(&mut self, x_o: &FeatureVector, init_std: f64, seed: u64) -> Result<Vec<Option<usize>>> {
        let k_old = self.arch.components;
        let tape = net::forward(&self.arch, &self.mean, None, self.prepare_input(x_o)?, None);
        let comps = net::components(&self.arch, &tape.out);
        let logits: Vec<f64> = comps.iter().map(|c| c.logit).collect();
        let best = (0..k_old).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).expect("K ≥ 1");
        let target = crate::densities::log_sum_exp(&logits) - (k_old as f64).ln();
        let logit_shift = target - logits[best];

        let shapes = self.arch.layer_shapes();
        let (o, i) = *shapes.last().expect("at least one layer");
        let bs = self.arch.block_size();
        let head_off = self.n_weights() - (o * i + o);
        // the split head and its copy both start fresh
        let src_rows = best * bs * i..(best + 1) * bs * i;
        let src_bias = best * bs..(best + 1) * bs;
        let mut map: Vec<Option<usize>> = (0..head_off).map(Some).collect();
        // output weights: old rows then a copy of the best block's rows
        map.extend((0..o * i).map(|k| (!src_rows.contains(&k)).then_some(head_off + k)));
        map.extend((0..bs * i).map(|_| None));
        map.extend((0..o).map(|k| (!src_bias.contains(&k)).then_some(head_off + o * i + k)));
        map.extend((0..bs).map(|_| None));

        let mut rng = derived_rng(seed, &[stream::COMPONENT, k_old as u64]);
        let mut mean = Vec::with_capacity(map.len());
        let mut log_std = Vec::with_capacity(map.len());
        mean.extend_from_slice(&self.mean[..head_off + o * i]);
        let d = self.arch.theta_dim;
        // rows 1..=d of a block produce the component mean
        let w_best = &self.mean[head_off + best * bs * i..head_off + (best + 1) * bs * i];
        mean.extend(w_best.iter().enumerate().map(|(k, w)| match k / i {
            t if (1..=d).contains(&t) => w + MEAN_OFFSET_NOISE * rng.sample::<f64, _>(StandardNormal),
            _ => *w,
        }));
        mean.extend_from_slice(&self.mean[head_off + o * i..]);
        let b_best = &self.mean[head_off + o * i + best * bs..head_off + o * i + (best + 1) * bs];
        // the copy starts narrower at x_o, as in `new`
        let u_best = &comps[best].u;
        let inv_softplus = |y: f64| y.exp_m1().ln();
        let mut diag_shift = vec![0.0; bs];
        let mut t = 1 + d;
        for r in 0..d {
            let v = u_best[r * d + r];
            diag_shift[t] = inv_softplus(COMPONENT_WIDTH_RATIO * v) - inv_softplus(v);
            t += d - r;
        }
        mean.extend(b_best.iter().enumerate().map(|(t, b)| match t {
            0 => b + logit_shift,
            t if t <= d => b + MEAN_OFFSET_NOISE * rng.sample::<f64, _>(StandardNormal),
            _ => b + diag_shift[t],
        }));
        let rho0 = init_std.ln();
        for m in &map {
            log_std.push(m.map_or(rho0, |j| self.log_std[j]));
        }
        self.arch.components += 1;
        debug_assert_eq!(mean.len(), self.arch.n_weights());
        self.mean = mean;
        self.log_std = log_std;
        Ok(map)
    }
}

/// Carry a weight prior across [`BayesianMdn::add_component`]; new entries
/// get `N(0, λ⁻¹)`.
pub fn remap_weight_prior(prior: &DiagGaussianOverWeights, map: &[Option<usize>], precision: f64) -> DiagGaussianOverWeights {
    let sd = precision.sqrt().recip();
    DiagGaussianOverWeights {
        mean: map.iter().map(|m| m.map_or(0.0, |j| prior.mean[j])).collect(),
        std: map.iter().map(|m| m.map_or(sd, |j| prior.std[j])).collect(),
    }
}
