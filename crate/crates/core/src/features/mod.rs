//! Summary statistics `x = f(s)` with missing masks and bad flags.

mod gru;
mod hh;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulators::{AutapseOutput, GlmDesign, Trace};

pub use gru::{gru_inputs, GruFeaturizer, GruTape, GRU_V_REST, GRU_V_SCALE};
pub use hh::{count_spikes, hh_features, spike_times, HhFeatureSpec, HH_FEATURE_NAMES};

/// Value written into masked or bad entries. Consumers must not read it.
pub const SENTINEL: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// `true` marks a missing feature.
    pub mask: Vec<bool>,
    pub bad: bool,
}

impl FeatureVector {
    pub fn complete(values: Vec<f64>) -> Self {
        let mask = vec![false; values.len()];
        FeatureVector { values, mask, bad: false }
    }

    /// A bad simulation: every entry masked with the sentinel.
    pub fn bad(dim: usize) -> Self {
        FeatureVector { values: vec![SENTINEL; dim], mask: vec![true; dim], bad: true }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn any_missing(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    /// Mark entry `i` missing and overwrite it with the sentinel.
    pub fn set_missing(&mut self, i: usize) {
        self.values[i] = SENTINEL;
        self.mask[i] = true;
    }
}

/// How the mixture-model simulator output is summarised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmFeatureMode {
    /// The draws themselves.
    #[default]
    Raw,
    /// Mean, log-variance and the nine deciles.
    Summary,
}

impl GmFeatureMode {
    pub fn dim(self, samples_per_draw: usize) -> usize {
        match self {
            GmFeatureMode::Raw => samples_per_draw,
            GmFeatureMode::Summary => 11,
        }
    }
}

pub fn gm_features(samples: &[f64], mode: GmFeatureMode) -> Result<FeatureVector> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to summarise".into()));
    }
    match mode {
        GmFeatureMode::Raw => Ok(FeatureVector::complete(samples.to_vec())),
        GmFeatureMode::Summary => {
            if samples.len() < 2 {
                return Err(Error::InvalidArgument("summary features need at least two samples".into()));
            }
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut values = vec![mean, var.max(1e-300).ln()];
            values.extend((1..10).map(|k| quantile_sorted(&sorted, k as f64 / 10.0)));
            Ok(FeatureVector::complete(values))
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Input–spike cross-correlation at the filter lags, `(1/T) Σ_i y_i v_i`.
pub fn glm_features(spikes: &[f64], design: &GlmDesign) -> Result<FeatureVector> {
    if spikes.len() != design.bins() {
        return Err(Error::DimensionMismatch { expected: design.bins(), got: spikes.len() });
    }
    let mut x = vec![0.0; design.dim];
    for (y, row) in spikes.iter().zip(&design.rows) {
        if *y != 0.0 {
            for (xj, vj) in x.iter_mut().zip(row) {
                *xj += y * vj;
            }
        }
    }
    let t = spikes.len() as f64;
    x.iter_mut().for_each(|v| *v /= t);
    Ok(FeatureVector::complete(x))
}

/// Time average of the rate; bad runs get `b = 1`.
pub fn autapse_features(out: &AutapseOutput) -> FeatureVector {
    if out.bad || !out.trace.is_finite() || out.trace.is_empty() {
        return FeatureVector::bad(1);
    }
    let r = &out.trace.signal;
    FeatureVector::complete(vec![r.iter().sum::<f64>() / r.len() as f64])
}

/// Wrapper used when a trace is judged on its own (e.g. imported observations).
pub fn autapse_trace_features(trace: &Trace) -> FeatureVector {
    autapse_features(&AutapseOutput { trace: trace.clone(), bad: false })
}

/// Feature table with explicit mask and bad columns.
///
/// Columns: `theta_*`, `x_*`, `m_*`, `bad`, `iw`. Header line is preceded by a
/// schema comment `# feature-table v1`.
pub fn write_feature_table<W: Write>(mut w: W, thetas: &[Vec<f64>], features: &[FeatureVector], weights: &[f64]) -> Result<()> {
    if thetas.len() != features.len() || weights.len() != features.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: thetas.len().min(weights.len()) });
    }
    writeln!(w, "# feature-table v1")?;
    let d = thetas.first().map_or(0, Vec::len);
    let nf = features.first().map_or(0, FeatureVector::dim);
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..d)
        .map(|i| format!("theta_{i}"))
        .chain((0..nf).map(|i| format!("x_{i}")))
        .chain((0..nf).map(|i| format!("m_{i}")))
        .chain(["bad".to_string(), "iw".to_string()])
        .collect();
    wtr.write_record(&header).map_err(csv_err)?;
    for ((theta, f), iw) in thetas.iter().zip(features).zip(weights) {
        let row: Vec<String> = theta
            .iter()
            .chain(&f.values)
            .map(|v| format!("{v:?}"))
            .chain(f.mask.iter().map(|&m| u8::from(m).to_string()))
            .chain([u8::from(f.bad).to_string(), format!("{iw:?}")])
            .collect();
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::simulators::{logistic, simulate_glm, GlmSpec};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn gm_summary_of_standard_normal() {
        let mut rng = rng_from_seed(11);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let f = gm_features(&xs, GmFeatureMode::Summary).unwrap();
        assert_eq!(f.dim(), 11);
        assert!(f.values[0].abs() < 0.04);
        assert!(f.values[1].abs() < 0.05);
        // median decile
        assert!(f.values[6].abs() < 0.05);
    }

    #[test]
    fn gm_raw_is_identity() {
        let f = gm_features(&[1.5], GmFeatureMode::Raw).unwrap();
        assert_eq!(f.values, vec![1.5]);
        assert!(gm_features(&[], GmFeatureMode::Raw).is_err());
    }

    #[test]
    fn glm_silent_and_saturated() {
        let d = GlmSpec { dim: 10, bins: 200, input_seed: 1 }.design();
        let zero = glm_features(&vec![0.0; 200], &d).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let ones = glm_features(&vec![1.0; 200], &d).unwrap();
        for j in 0..10 {
            let mean = d.rows.iter().map(|r| r[j]).sum::<f64>() / 200.0;
            assert!((ones.values[j] - mean).abs() < 1e-12);
        }
        assert!(glm_features(&[0.0; 3], &d).is_err());
    }

    #[test]
    fn glm_features_match_expectation() {
        let d = GlmSpec { dim: 10, bins: 100, input_seed: 3 }.design();
        let beta = [-1.0, 0.5, 0.3, 0.0, -0.2, 0.1, 0.0, 0.0, 0.0, 0.0];
        let reps = 1000;
        let mut rng = rng_from_seed(2);
        let mut sum = [0.0; 10];
        let mut sq = [0.0; 10];
        for _ in 0..reps {
            let y = simulate_glm(&d, &beta, &mut rng).unwrap();
            let f = glm_features(&y, &d).unwrap();
            for j in 0..10 {
                sum[j] += f.values[j];
                sq[j] += f.values[j] * f.values[j];
            }
        }
        let eta: Vec<f64> = d.linear_predictor(&beta).into_iter().map(logistic).collect();
        for j in 0..10 {
            let expected = eta.iter().zip(&d.rows).map(|(p, r)| p * r[j]).sum::<f64>() / 100.0;
            let mean = sum[j] / reps as f64;
            let se = ((sq[j] / reps as f64 - mean * mean) / reps as f64).sqrt();
            assert!((mean - expected).abs() < 4.0 * se, "lag {j}: {mean} vs {expected} (se {se})");
        }
    }

    #[test]
    fn autapse_mean_and_bad() {
        let trace = Trace { dt: 0.01, channel: "r".into(), signal: vec![3.0; 10], stimulus: vec![1.0; 10] };
        let f = autapse_trace_features(&trace);
        assert_eq!(f.values, vec![3.0]);
        assert!(!f.bad);
        let bad = autapse_features(&AutapseOutput { trace, bad: true });
        assert!(bad.bad && bad.mask[0]);
    }

    #[test]
    fn feature_table_layout() {
        let mut f = FeatureVector::complete(vec![1.0, 2.0]);
        f.set_missing(1);
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &[vec![0.5]], &[f], &[1.25]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# feature-table v1");
        assert_eq!(lines[1], "theta_0,x_0,x_1,m_0,m_1,bad,iw");
        assert_eq!(lines[2], "0.5,1.0,0.0,0,1,0,1.25");
    }
}
