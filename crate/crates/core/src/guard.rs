//! Classifier `ĝ(θ)` for the probability that a simulation at θ turns out bad.
//!
//! One hidden tanh layer with a sigmoid output, trained with log-loss on every
//! `(θ, b)` pair seen so far. Proposals are thinned with probability `ĝ(θ)`
//! before simulating.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::densities::Distribution;
use crate::error::{check_dim, Error, Result};
use crate::grad::{minimise, Differentiable, GradReport, TrainConfig};
use crate::mdn::Affine;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardConfig {
    pub hidden: usize,
    /// Labels of each class required before the guard rejects anything.
    pub min_per_class: usize,
    pub train: TrainConfig,
    /// Consecutive rejections tolerated by [`guarded_propose`].
    pub max_rejections: usize,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig { hidden: 20, min_per_class: 50, train: TrainConfig { epochs: 200, ..TrainConfig::default() }, max_rejections: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardNet {
    pub config: GuardConfig,
    pub scaling: Affine,
    /// `[W₁ (h × d), b₁ (h), w₂ (h), b₂]`.
    pub weights: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl GuardNet {
    pub fn new(config: GuardConfig, scaling: Affine, rng: &mut Rng) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::InvalidArgument("guard needs hidden units".into()));
        }
        config.train.validate()?;
        let (h, d) = (config.hidden, scaling.dim());
        let a = 1.0 / (d as f64).sqrt();
        let b = 1.0 / (h as f64).sqrt();
        let mut weights: Vec<f64> = (0..h * d).map(|_| rng.random_range(-a..a)).collect();
        weights.extend(std::iter::repeat_n(0.0, h));
        weights.extend((0..h).map(|_| rng.random_range(-b..b)));
        weights.push(0.0);
        Ok(GuardNet { config, scaling, weights, thetas: Vec::new(), labels: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.scaling.dim()
    }

    fn logit_with(&self, w: &[f64], theta: &[f64], hidden_out: Option<&mut Vec<f64>>) -> f64 {
        let (h, d) = (self.config.hidden, self.dim());
        let z = self.scaling.apply(theta);
        let (w1, rest) = w.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let act: Vec<f64> =
            (0..h).map(|j| (b1[j] + w1[j * d..(j + 1) * d].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()).tanh()).collect();
        let a = b2[0] + act.iter().zip(w2).map(|(x, y)| x * y).sum::<f64>();
        if let Some(out) = hidden_out {
            *out = act;
        }
        a
    }

    /// `ĝ(θ)`, kept inside the open unit interval.
    pub fn probability(&self, theta: &[f64]) -> f64 {
        let a = self.logit_with(&self.weights, theta, None);
        (1.0 / (1.0 + (-a).exp())).clamp(1e-15, 1.0 - 1e-15)
    }

    /// Number of good and bad labels seen.
    pub fn counts(&self) -> (usize, usize) {
        let bad = self.labels.iter().filter(|&&b| b).count();
        (self.labels.len() - bad, bad)
    }

    /// Whether enough labels of both classes exist for the guard to reject.
    pub fn active(&self) -> bool {
        let (good, bad) = self.counts();
        good >= self.config.min_per_class && bad >= self.config.min_per_class
    }

    /// Rejection probability actually applied: zero while inactive.
    pub fn rejection_probability(&self, theta: &[f64]) -> f64 {
        if self.active() {
            self.probability(theta)
        } else {
            0.0
        }
    }

    /// Log-loss of the current weights on the whole buffer.
    pub fn buffer_loss(&self) -> Result<f64> {
        let idx: Vec<usize> = (0..self.labels.len()).collect();
        GuardObjective { guard: self }.loss(&self.weights, &idx, 0)
    }
}

/// Log-loss of the guard on its label buffer.
pub struct GuardObjective<'a> {
    pub guard: &'a GuardNet,
}

impl Differentiable for GuardObjective<'_> {
    type Batch = [usize];

    fn loss_and_grad(&self, params: &[f64], batch: &[usize], _seed: u64) -> Result<GradReport> {
        let g = self.guard;
        let (h, d) = (g.config.hidden, g.dim());
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let nb = batch.len().max(1) as f64;
        let mut act = Vec::new();
        for &n in batch {
            let theta = &g.thetas[n];
            let y = if g.labels[n] { 1.0 } else { 0.0 };
            let a = g.logit_with(params, theta, Some(&mut act));
            // −[y ln σ(a) + (1−y) ln(1−σ(a))] = softplus(a) − y a
            let sp = if a > 30.0 { a } else { a.exp().ln_1p() };
            loss += (sp - y * a) / nb;
            let ga = (1.0 / (1.0 + (-a).exp()) - y) / nb;
            let z = g.scaling.apply(theta);
            let w2 = &params[h * d + h..h * d + 2 * h];
            grad[2 * h + h * d] += ga;
            for j in 0..h {
                grad[h * d + h + j] += ga * act[j];
                let gz = ga * w2[j] * (1.0 - act[j] * act[j]);
                grad[h * d + j] += gz;
                for k in 0..d {
                    grad[j * d + k] += gz * z[k];
                }
            }
        }
        Ok(GradReport { loss, grad })
    }
}

/// Append labelled pairs to the buffer and retrain on all of it.
///
/// Returns the per-epoch loss curve (empty while the guard is inactive).
pub fn guard_update(guard: &mut GuardNet, thetas: &[Vec<f64>], bad: &[bool], seed: u64) -> Result<Vec<f64>> {
    check_dim(thetas.len(), bad.len())?;
    for t in thetas {
        check_dim(guard.dim(), t.len())?;
    }
    guard.thetas.extend_from_slice(thetas);
    guard.labels.extend_from_slice(bad);
    if !guard.active() {
        return Ok(Vec::new());
    }
    let mut w = guard.weights.clone();
    let curve = minimise(&GuardObjective { guard }, &mut w, guard.labels.len(), &guard.config.train, seed)?;
    guard.weights = w;
    Ok(curve)
}

/// Draw from `proposal` and keep θ with probability `1 − g(θ)`.
///
/// Returns the accepted θ and the number of rejections before it.
pub fn guarded_propose(
    proposal: &Distribution,
    g: impl Fn(&[f64]) -> f64,
    max_rejections: usize,
    rng: &mut Rng,
) -> Result<(Vec<f64>, usize)> {
    let mut rejected = 0;
    loop {
        let theta = proposal.sample_one(rng);
        let p = g(&theta);
        if p <= 0.0 || rng.random::<f64>() >= p {
            return Ok((theta, rejected));
        }
        rejected += 1;
        if rejected > max_rejections {
            return Err(Error::ProposalStarvation(rejected));
        }
    }
}

/// Unnormalised effective prior `p(θ) (1 − g(θ))` at each point.
pub fn effective_prior_report(prior: &Distribution, g: impl Fn(&[f64]) -> f64, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points.iter().map(|t| Ok(prior.log_pdf(t)?.exp() * (1.0 - g(t)))).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GuardHeader {
    format: String,
    version: u32,
    config: GuardConfig,
    scaling: Affine,
    binary: String,
    n_weights: usize,
}

/// JSON header plus little-endian `f64` weights, like the MDN checkpoint.
pub fn save_guard(guard: &GuardNet, dir: &Path, stem: &str) -> Result<PathBuf> {
    let binary = format!("{stem}.bin");
    fs::write(dir.join(&binary), guard.weights.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    let header = GuardHeader {
        format: "snpekit-guard".into(),
        version: 1,
        config: guard.config.clone(),
        scaling: guard.scaling.clone(),
        binary,
        n_weights: guard.weights.len(),
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

pub fn load_guard(header_path: &Path) -> Result<GuardNet> {
    let header: GuardHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    if header.format != "snpekit-guard" || header.version != 1 {
        return Err(Error::Parse("not a guard checkpoint".into()));
    }
    let bytes = fs::read(header_path.parent().unwrap_or(Path::new(".")).join(&header.binary))?;
    let weights: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let (h, d) = (header.config.hidden, header.scaling.dim());
    if weights.len() != header.n_weights || weights.len() != h * d + 2 * h + 1 {
        return Err(Error::Parse("guard weight count does not match its architecture".into()));
    }
    Ok(GuardNet { config: header.config, scaling: header.scaling, weights, thetas: Vec::new(), labels: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::BoxUniform;
    use crate::grad::{finite_difference_grad, max_relative_error};
    use crate::rng::rng_from_seed;

    fn unit_box(d: usize) -> Distribution {
        BoxUniform::new(vec![0.0; d], vec![1.0; d]).unwrap().into()
    }

    fn guard(seed: u64) -> GuardNet {
        let prior = unit_box(2);
        GuardNet::new(GuardConfig::default(), Affine::from_distribution(&prior), &mut rng_from_seed(seed)).unwrap()
    }

    fn labelled(n: usize, seed: u64, rule: impl Fn(&[f64]) -> bool) -> (Vec<Vec<f64>>, Vec<bool>) {
        let thetas = unit_box(2).sample(n, &mut rng_from_seed(seed));
        let bad = thetas.iter().map(|t| rule(t)).collect();
        (thetas, bad)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut g = guard(1);
        let (t, b) = labelled(6, 2, |t| t[0] > 0.5);
        g.thetas = t;
        g.labels = b;
        g.weights.iter_mut().enumerate().for_each(|(i, w)| *w += 0.1 * ((i % 5) as f64 - 2.0));
        let obj = GuardObjective { guard: &g };
        let idx: Vec<usize> = (0..6).collect();
        let analytic = obj.loss_and_grad(&g.weights, &idx, 0).unwrap().grad;
        let numeric = finite_difference_grad(&obj, &g.weights, &idx, 0, 1e-5).unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn one_class_collapses_towards_zero() {
        let mut g = guard(3);
        g.config.min_per_class = 0;
        let (t, _) = labelled(500, 4, |_| false);
        guard_update(&mut g, &t, &vec![false; 500], 5).unwrap();
        let probe = unit_box(2).sample(200, &mut rng_from_seed(6));
        let mean = probe.iter().map(|p| g.probability(p)).sum::<f64>() / 200.0;
        assert!(mean < 0.1, "mean prediction {mean}");
    }

    #[test]
    fn inactive_until_both_classes_seen() {
        let mut g = guard(7);
        let (t, b) = labelled(100, 8, |t| t[0] > 0.9);
        let curve = guard_update(&mut g, &t, &b, 0).unwrap();
        assert!(curve.is_empty());
        assert!(!g.active());
        assert_eq!(g.rejection_probability(&[0.95, 0.5]), 0.0);
    }

    #[test]
    fn learns_a_boundary_and_flips_with_labels() {
        let rule = |t: &[f64]| t[0] > 0.5;
        let (t, b) = labelled(2000, 9, rule);
        let mut g = guard(10);
        let curve = guard_update(&mut g, &t, &b, 11).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        let flipped: Vec<bool> = b.iter().map(|x| !x).collect();
        let mut h = guard(10);
        guard_update(&mut h, &t, &flipped, 11).unwrap();
        for p in [[0.1, 0.5], [0.3, 0.2], [0.7, 0.8], [0.9, 0.1]] {
            assert_eq!(g.probability(&p) > 0.5, rule(&p));
            assert!((g.probability(&p) - (1.0 - h.probability(&p))).abs() < 0.05);
        }
    }

    #[test]
    fn zero_guard_accepts_first_draw() {
        let mut rng = rng_from_seed(1);
        let (_, rejected) = guarded_propose(&unit_box(2), |_| 0.0, 10, &mut rng).unwrap();
        assert_eq!(rejected, 0);
    }

    #[test]
    fn half_guard_thins_by_half() {
        let mut rng = rng_from_seed(2);
        let n = 10_000;
        let rejected: usize = (0..n).map(|_| guarded_propose(&unit_box(1), |_| 0.5, 1000, &mut rng).unwrap().1).sum();
        let rate = n as f64 / (n + rejected) as f64;
        assert!((rate - 0.5).abs() < 4.0 * (0.25 / (n + rejected) as f64).sqrt(), "acceptance {rate}");
    }

    #[test]
    fn indicator_guard_restricts_support() {
        // accepted draws ~ U(0, 0.5); KS against that CDF
        let mut rng = rng_from_seed(3);
        let mut xs: Vec<f64> = (0..10_000)
            .map(|_| guarded_propose(&unit_box(1), |t| if t[0] > 0.5 { 1.0 } else { 0.0 }, 1000, &mut rng).unwrap().0[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n - 2.0 * x).abs().max((i as f64 / n - 2.0 * x).abs()))
            .fold(0.0, f64::max);
        assert!(xs.iter().all(|&x| x <= 0.5));
        assert!(d < 1.63 / n.sqrt(), "KS D = {d}");
    }

    #[test]
    fn certain_rejection_starves() {
        let mut rng = rng_from_seed(4);
        assert_eq!(guarded_propose(&unit_box(1), |_| 1.0, 100, &mut rng), Err(Error::ProposalStarvation(101)));
    }

    #[test]
    fn effective_prior_scales_prior() {
        let prior = unit_box(2);
        let pts = vec![vec![0.2, 0.2], vec![0.8, 0.1]];
        assert_eq!(effective_prior_report(&prior, |_| 0.0, &pts).unwrap(), vec![1.0, 1.0]);
        assert_eq!(effective_prior_report(&prior, |_| 0.5, &pts).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = guard(12);
        let back = load_guard(&save_guard(&g, dir.path(), "guard").unwrap()).unwrap();
        assert_eq!(back.weights, g.weights);
        assert_eq!(back.probability(&[0.3, 0.6]), g.probability(&[0.3, 0.6]));
    }
}
