use super::{net, BayesianMdn};
use crate::densities::{kl_term, DiagGaussianOverWeights};
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureVector;
use crate::grad::{Differentiable, GradReport, Slice};
use crate::rng::derived_rng;

/// Training data of one round.
///
/// `weight` is the product of importance weight and kernel value. For a
/// network with a recurrent front end `sequences` holds the flattened input
/// traces and `features` is unused.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub theta: Vec<Vec<f64>>,
    pub features: Vec<FeatureVector>,
    pub sequences: Vec<Vec<f64>>,
    pub weight: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn push_features(&mut self, theta: Vec<f64>, x: FeatureVector, weight: f64) {
        self.theta.push(theta);
        self.features.push(x);
        self.weight.push(weight);
    }

    pub fn push_sequence(&mut self, theta: Vec<f64>, seq: Vec<f64>, weight: f64) {
        self.theta.push(theta);
        self.sequences.push(seq);
        self.weight.push(weight);
    }

    /// Concatenate another round's data.
    pub fn extend(&mut self, other: TrainingSet) {
        self.theta.extend(other.theta);
        self.features.extend(other.features);
        self.sequences.extend(other.sequences);
        self.weight.extend(other.weight);
    }
}

/// How the network weights are fitted.
#[derive(Debug, Clone, Copy)]
pub enum Fit<'a> {
    /// Maximum likelihood on the weights themselves (`φ_s` ignored).
    Point,
    /// Expected log-loss under `N(φ_m, φ_s²)` plus `kl_scale · KL(π ‖ prior)`.
    Variational { prior: &'a DiagGaussianOverWeights, kl_scale: f64 },
}

/// Loss `−(1/B) Σ_n w_n ln q(θ_n | x_n)` (+ KL term) over minibatch indices.
///
/// Parameters are laid out as `mean`, then `log_std` (variational fits only),
/// `imputation` and `gru` (when a front end is attached).
pub struct MdnObjective<'a> {
    pub mdn: &'a BayesianMdn,
    pub data: &'a TrainingSet,
    pub fit: Fit<'a>,
}

impl<'a> MdnObjective<'a> {
    pub fn new(mdn: &'a BayesianMdn, data: &'a TrainingSet, fit: Fit<'a>) -> Result<Self> {
        if data.weight.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("training weights must be finite and non-negative".into()));
        }
        if data.theta.len() != data.weight.len() {
            return Err(Error::DimensionMismatch { expected: data.theta.len(), got: data.weight.len() });
        }
        let inputs = if mdn.front_end.is_some() { data.sequences.len() } else { data.features.len() };
        check_dim(data.theta.len(), inputs)?;
        if let Fit::Variational { prior, .. } = fit {
            check_dim(mdn.n_weights(), prior.len())?;
        }
        Ok(MdnObjective { mdn, data, fit })
    }

    fn variational(&self) -> bool {
        matches!(self.fit, Fit::Variational { .. })
    }

    pub fn layout(&self) -> Vec<Slice> {
        let nw = self.mdn.n_weights();
        let mut out = vec![Slice { name: "mean".into(), offset: 0, shape: vec![nw] }];
        let mut off = nw;
        if self.variational() {
            out.push(Slice { name: "log_std".into(), offset: off, shape: vec![nw] });
            off += nw;
        }
        let ni = self.mdn.imputation.len();
        out.push(Slice { name: "imputation".into(), offset: off, shape: vec![ni] });
        off += ni;
        if let Some(fe) = &self.mdn.front_end {
            out.push(Slice { name: "gru".into(), offset: off, shape: vec![fe.weights.len()] });
        }
        out
    }

    pub fn pack(&self) -> Vec<f64> {
        let m = self.mdn;
        let mut p = m.mean.clone();
        if self.variational() {
            p.extend(&m.log_std);
        }
        p.extend(&m.imputation);
        if let Some(fe) = &m.front_end {
            p.extend(&fe.weights);
        }
        p
    }

    /// Write packed parameters back into `target`.
    pub fn unpack(&self, params: &[f64], target: &mut BayesianMdn) {
        let (mean, log_std, imputation, gru) = self.split(params);
        target.mean.copy_from_slice(mean);
        if let Some(r) = log_std {
            target.log_std.copy_from_slice(r);
        }
        target.imputation.copy_from_slice(imputation);
        if let (Some(fe), Some(g)) = (target.front_end.as_mut(), gru) {
            fe.weights.copy_from_slice(g);
        }
    }

    /// `(mean, log_std, imputation, gru)` views of packed parameters.
    #[allow(clippy::type_complexity)]
    fn split<'p>(&self, p: &'p [f64]) -> (&'p [f64], Option<&'p [f64]>, &'p [f64], Option<&'p [f64]>) {
        let nw = self.mdn.n_weights();
        let (mean, rest) = p.split_at(nw);
        let (log_std, rest) = if self.variational() {
            let (a, b) = rest.split_at(nw);
            (Some(a), b)
        } else {
            (None, rest)
        };
        let (imp, rest) = rest.split_at(self.mdn.imputation.len());
        (mean, log_std, imp, self.mdn.front_end.as_ref().map(|_| rest))
    }

    fn n_params(&self) -> usize {
        self.layout().iter().map(Slice::len).sum()
    }
}

impl Differentiable for MdnObjective<'_> {
    type Batch = [usize];

    fn loss_and_grad(&self, params: &[f64], batch: &[usize], seed: u64) -> Result<GradReport> {
        check_dim(self.n_params(), params.len())?;
        let mdn = self.mdn;
        let arch = &mdn.arch;
        let nw = mdn.n_weights();
        let (mean, log_std, imputation, gru_w) = self.split(params);
        let s2: Option<Vec<f64>> = log_std.map(|r| r.iter().map(|v| (2.0 * v).exp()).collect());
        let mut grad = vec![0.0; params.len()];
        let (g_mean, rest) = grad.split_at_mut(nw);
        let (mut g_rho, rest) = if log_std.is_some() {
            let (a, b) = rest.split_at_mut(nw);
            (Some(a), b)
        } else {
            (None, rest)
        };
        let (g_imp, g_gru) = rest.split_at_mut(imputation.len());
        let log_jac = mdn.theta_scaling.log_abs_det();

        let mut loss = 0.0;
        let b = batch.len().max(1) as f64;
        let mut g_out = vec![0.0; arch.head_dim()];
        let mut g_in = vec![0.0; arch.input_dim];
        for &n in batch {
            let coef = self.data.weight[n];
            if coef == 0.0 {
                continue;
            }
            let scale = -coef / b;
            let (input, gru_tape, mask) = match (&mdn.front_end, gru_w) {
                (Some(fe), Some(gw)) => {
                    let tape = fe.gru.forward_tape(gw, &self.data.sequences[n])?;
                    (tape.final_state(fe.gru.hidden).to_vec(), Some(tape), None)
                }
                _ => {
                    let x = &self.data.features[n];
                    check_dim(arch.input_dim, x.dim())?;
                    let input = x
                        .values
                        .iter()
                        .zip(&x.mask)
                        .enumerate()
                        .map(|(i, (v, &m))| if m { imputation[i] } else { (v - mdn.input_scaling.shift[i]) / mdn.input_scaling.scale[i] })
                        .collect();
                    (input, None, Some(&x.mask))
                }
            };
            let mut rng = derived_rng(seed, &[n as u64]);
            let tape = net::forward(arch, mean, s2.as_deref(), input, s2.as_ref().map(|_| &mut rng));
            let y = mdn.theta_scaling.apply(&self.data.theta[n]);
            g_out.iter_mut().for_each(|v| *v = 0.0);
            let log_q = net::head_log_q(arch, &tape.out, &y, Some((&mut g_out, scale))) - log_jac;
            if !log_q.is_finite() {
                return Err(Error::NonFiniteLoss(log_q));
            }
            loss += scale * log_q;
            let need_input = gru_tape.is_some() || mask.is_some_and(|m| m.iter().any(|&v| v));
            g_in.iter_mut().for_each(|v| *v = 0.0);
            net::backward(arch, mean, s2.as_deref(), &tape, &g_out, g_mean, g_rho.as_deref_mut(), need_input.then_some(&mut g_in[..]));
            if let Some(mask) = mask {
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        g_imp[i] += g_in[i];
                    }
                }
            }
            if let (Some(tape), Some(fe), Some(gw)) = (gru_tape, &mdn.front_end, gru_w) {
                fe.gru.backward(gw, &self.data.sequences[n], &tape, &g_in, g_gru)?;
            }
        }

        if let (Fit::Variational { prior, kl_scale }, Some(rho), Some(g_rho)) = (self.fit, log_std, g_rho) {
            for j in 0..nw {
                let s = rho[j].exp();
                let (m0, s0) = (prior.mean[j], prior.std[j]);
                loss += kl_scale * kl_term(mean[j], s, m0, s0);
                g_mean[j] += kl_scale * (mean[j] - m0) / (s0 * s0);
                g_rho[j] += kl_scale * (s * s / (s0 * s0) - 1.0);
            }
        }
        Ok(GradReport { loss, grad })
    }
}

/// Importance- and kernel-weighted negative log-likelihood of a point network.
pub fn mdn_log_loss(mdn: &BayesianMdn, weights: &[f64], data: &TrainingSet) -> Result<f64> {
    let mut probe = mdn.clone();
    check_dim(mdn.n_weights(), weights.len())?;
    probe.mean.copy_from_slice(weights);
    let obj = MdnObjective::new(&probe, data, Fit::Point)?;
    let all: Vec<usize> = (0..data.len()).collect();
    obj.loss(&obj.pack(), &all, 0)
}
