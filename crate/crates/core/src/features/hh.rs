use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::simulators::Trace;

pub const HH_FEATURE_NAMES: [&str; 21] = [
    "spike_count",
    "resting_potential",
    "acf_1ms",
    "acf_2ms",
    "acf_3ms",
    "acf_4ms",
    "acf_5ms",
    "acf_6ms",
    "acf_7ms",
    "acf_8ms",
    "acf_9ms",
    "acf_10ms",
    "mean",
    "variance",
    "moment_3",
    "moment_4",
    "moment_5",
    "moment_6",
    "moment_7",
    "moment_8",
    "latency",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HhFeatureSpec {
    /// Upward crossing level for spike detection (mV).
    pub threshold: f64,
    /// Minimum interval between detected spikes (ms).
    pub refractory: f64,
    /// Stimulus window (ms); moments and autocorrelations are taken inside it.
    pub onset: f64,
    pub offset: f64,
    /// Append latency to first spike as a 21st feature.
    pub latency: bool,
}

impl Default for HhFeatureSpec {
    fn default() -> Self {
        HhFeatureSpec { threshold: -10.0, refractory: 2.0, onset: 60.0, offset: 240.0, latency: false }
    }
}

impl HhFeatureSpec {
    pub fn dim(&self) -> usize {
        if self.latency {
            21
        } else {
            20
        }
    }
}

/// Times (ms) of upward threshold crossings separated by the refractory window.
pub fn spike_times(trace: &Trace, threshold: f64, refractory: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (k, w) in trace.signal.windows(2).enumerate() {
        if w[0] < threshold && w[1] >= threshold {
            let t = (k + 1) as f64 * trace.dt;
            if t - last >= refractory {
                times.push(t);
                last = t;
            }
        }
    }
    times
}

pub fn count_spikes(trace: &Trace, threshold: f64, refractory: f64) -> usize {
    spike_times(trace, threshold, refractory).len()
}

// variance below this fraction of the squared mean counts as a flat trace
const FLAT_REL: f64 = 1e-20;

pub fn hh_features(trace: &Trace, spec: &HhFeatureSpec) -> FeatureVector {
    let dim = spec.dim();
    if trace.is_empty() || !trace.is_finite() {
        return FeatureVector::bad(dim);
    }
    let mut f = FeatureVector::complete(vec![0.0; dim]);
    let v = &trace.signal;
    let n = v.len();
    let idx = |t: f64| ((t / trace.dt).round() as usize).min(n);
    let (on, off) = (idx(spec.onset), idx(spec.offset).max(idx(spec.onset)));

    let spikes = spike_times(trace, spec.threshold, spec.refractory);
    f.values[0] = spikes.len() as f64;

    if on > 0 {
        f.values[1] = v[..on].iter().sum::<f64>() / on as f64;
    } else {
        f.set_missing(1);
    }

    let window = &v[on..off];
    let m = window.len() as f64;
    if window.is_empty() {
        (2..20).for_each(|i| f.set_missing(i));
    } else {
        let mean = window.iter().sum::<f64>() / m;
        let central = |p: i32| window.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / m;
        let var = central(2);
        f.values[12] = mean;
        f.values[13] = var;
        if var <= FLAT_REL * (1.0 + mean * mean) {
            (2..12).chain(14..20).for_each(|i| f.set_missing(i));
        } else {
            for lag_ms in 1..=10 {
                let lag = (lag_ms as f64 / trace.dt).round() as usize;
                let slot = 1 + lag_ms;
                if lag >= window.len() {
                    f.set_missing(slot);
                    continue;
                }
                let c: f64 = window.iter().zip(&window[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum();
                f.values[slot] = c / (var * m);
            }
            let sd = var.sqrt();
            for p in 3..=8 {
                f.values[11 + p as usize] = central(p) / sd.powi(p);
            }
        }
    }

    if spec.latency {
        match spikes.iter().find(|&&t| t >= spec.onset) {
            Some(t) => f.values[20] = t - spec.onset,
            None => f.set_missing(20),
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(signal: Vec<f64>, dt: f64) -> Trace {
        let stimulus = vec![0.0; signal.len()];
        Trace { dt, channel: "V".into(), signal, stimulus }
    }

    #[test]
    fn flat_trace_masks_shape_features() {
        let spec = HhFeatureSpec { latency: true, ..HhFeatureSpec::default() };
        let f = hh_features(&trace(vec![-70.0; 9600], 0.025), &spec);
        assert!(!f.bad);
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[1], -70.0);
        assert_eq!(f.values[12], -70.0);
        assert_eq!(f.values[13], 0.0);
        assert!((2..12).all(|i| f.mask[i]));
        assert!((14..20).all(|i| f.mask[i]));
        assert!(!f.mask[0] && !f.mask[1] && !f.mask[12] && !f.mask[13]);
        assert!(f.mask[20], "latency undefined without spikes");
        assert!(f.mask.iter().zip(&f.values).all(|(&m, &v)| !m || v == 0.0));
    }

    #[test]
    fn counts_synthetic_crossings() {
        let dt = 0.025;
        let mut v = vec![-65.0; 9600];
        for centre in [3000usize, 5000, 7000] {
            for k in 0..40 {
                v[centre + k] = 20.0;
            }
        }
        let t = trace(v, dt);
        assert_eq!(count_spikes(&t, -10.0, 2.0), 3);
        let f = hh_features(&t, &HhFeatureSpec { latency: true, ..HhFeatureSpec::default() });
        assert_eq!(f.values[0], 3.0);
        assert!((f.values[20] - (3000.0 * dt - 60.0)).abs() < 1e-9);
    }

    #[test]
    fn refractory_window_merges_chatter() {
        // crossings 1 ms apart count once
        let mut v = vec![-65.0; 400];
        for start in [100usize, 140] {
            v[start] = 0.0;
        }
        assert_eq!(count_spikes(&trace(v, 0.025), -10.0, 2.0), 1);
    }

    #[test]
    fn autocorrelation_of_sinusoid() {
        let dt = 0.025;
        let period = 20.0;
        let v: Vec<f64> = (0..9600).map(|k| -60.0 + 5.0 * (2.0 * std::f64::consts::PI * k as f64 * dt / period).sin()).collect();
        let f = hh_features(&trace(v, dt), &HhFeatureSpec::default());
        // finite-window estimate of cos(2π lag / period)
        for lag in 1..=10 {
            let expected = (2.0 * std::f64::consts::PI * lag as f64 / period).cos();
            assert!((f.values[1 + lag] - expected).abs() < 0.07, "lag {lag}: {}", f.values[1 + lag]);
        }
        assert!(f.values[14].abs() < 1e-2, "odd standardised moment of a sinusoid");
        assert!((f.values[15] - 1.5).abs() < 1e-2, "kurtosis of a sinusoid");
    }

    #[test]
    fn robust_to_integration_step() {
        use crate::rng::rng_from_seed;
        use crate::simulators::hh::{simulate_hh, to_log_abs, HhSpec, HH_GROUND_TRUTH};
        let mut p = HH_GROUND_TRUTH;
        p[8] = 1e-300;
        let theta = to_log_abs(&p);
        let spec = HhFeatureSpec::default();
        let run = |dt: f64| {
            let sim = HhSpec { dt, ..HhSpec::default() };
            hh_features(&simulate_hh(&sim, &theta, &mut rng_from_seed(0)).unwrap().trace, &spec)
        };
        let (a, b) = (run(0.025), run(0.0125));
        for i in (0..20).filter(|&i| !a.mask[i]) {
            let rel = ((a.values[i] - b.values[i]) / b.values[i]).abs();
            assert!(rel < 0.02, "{}: {} vs {}", HH_FEATURE_NAMES[i], a.values[i], b.values[i]);
        }
    }

    #[test]
    fn non_finite_trace_is_bad() {
        let f = hh_features(&trace(vec![f64::NAN; 10], 0.025), &HhFeatureSpec::default());
        assert!(f.bad);
    }
}
