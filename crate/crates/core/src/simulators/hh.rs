//! Single-compartment Hodgkin–Huxley neuron with Pospischil-type kinetics.
//!
//! Membrane equation
//!
//! ```text
//! C dV/dt = g_leak (E_leak − V) + ḡ_Na m³h (E_Na − V) + ḡ_K n⁴ (E_K − V)
//!         + ḡ_M p (E_K − V) + I_inj(t) + σ ξ(t)
//! ```
//!
//! Rate functions (V in mV, rates in 1/ms, `efun(z) = z / (eᶻ − 1)`):
//!
//! ```text
//! α_m = 0.32 efun(−(V − V_T − 13)/4) · 4      β_m = 0.28 efun((V − V_T − 40)/5) · 5
//! α_h = 0.128 exp(−(V − V_T − 17)/18)          β_h = 4 / (1 + exp(−(V − V_T − 40)/5))
//! α_n = 0.032 efun(−(V − V_T − 15)/5) · 5      β_n = k_βn1 exp(−(V − V_T − 10)/k_βn2)
//! p_∞ = 1 / (1 + exp(−(V + 35)/10))            τ_p = τ_max / (3.3 exp((V + 35)/20) + exp(−(V + 35)/20))
//! ```
//!
//! The two potassium-activation constants `k_βn1`, `k_βn2` enter only the
//! backward rate of the `n` gate. Integration uses exponential Euler for the
//! voltage and all gates; the noise term is white current noise of density
//! `σ / √dt` held constant over each step.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Trace;
use crate::error::{check_dim, Error, Result};
use crate::rng::{derived_rng, Rng};

pub const HH_PARAM_NAMES: [&str; 12] =
    ["g_leak", "g_Na", "g_K", "g_M", "E_leak", "E_Na", "E_K", "V_T", "sigma", "k_betan1", "k_betan2", "tau_max"];

/// Ground-truth parameters in natural units (mS/cm², mV, µA/cm², ms).
pub const HH_GROUND_TRUTH: [f64; 12] = [0.1, 20.0, 15.0, 0.07, -70.0, 53.0, -107.0, -60.0, 0.1, 0.5, 40.0, 600.0];

/// Map natural parameters to log-absolute coordinates.
pub fn to_log_abs(params: &[f64]) -> Vec<f64> {
    params.iter().map(|p| p.abs().ln()).collect()
}

/// Map log-absolute coordinates back using the signs of the ground truth.
pub fn from_log_abs(theta: &[f64]) -> Vec<f64> {
    theta.iter().zip(HH_GROUND_TRUTH).map(|(t, g)| g.signum() * t.exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Stimulus {
    /// Constant current between `onset` and `offset` (ms).
    Step { amplitude: f64, onset: f64, offset: f64 },
    /// Ornstein–Uhlenbeck current (frozen by `seed`) between `onset` and `offset`.
    ColouredNoise { mean: f64, std: f64, tau: f64, seed: u64, onset: f64, offset: f64 },
}

impl Stimulus {
    pub fn onset(&self) -> f64 {
        match self {
            Stimulus::Step { onset, .. } | Stimulus::ColouredNoise { onset, .. } => *onset,
        }
    }

    pub fn offset(&self) -> f64 {
        match self {
            Stimulus::Step { offset, .. } | Stimulus::ColouredNoise { offset, .. } => *offset,
        }
    }

    /// Typical current magnitude, used to scale network inputs.
    pub fn scale(&self) -> f64 {
        match self {
            Stimulus::Step { amplitude, .. } => amplitude.abs().max(1e-12),
            Stimulus::ColouredNoise { mean, std, .. } => (mean.abs() + std).max(1e-12),
        }
    }

    /// Current at every integration step.
    pub fn sample(&self, dt: f64, steps: usize) -> Vec<f64> {
        let in_window = |k: usize, on: f64, off: f64| {
            let t = k as f64 * dt;
            t >= on && t < off
        };
        match *self {
            Stimulus::Step { amplitude, onset, offset } => {
                (0..steps).map(|k| if in_window(k, onset, offset) { amplitude } else { 0.0 }).collect()
            }
            Stimulus::ColouredNoise { mean, std, tau, seed, onset, offset } => {
                let mut rng = derived_rng(seed, &[0x5354]);
                let a = (-dt / tau).exp();
                let b = std * (1.0 - a * a).sqrt();
                let mut x = 0.0;
                (0..steps)
                    .map(|k| {
                        let z: f64 = rng.sample(StandardNormal);
                        x = a * x + b * z;
                        if in_window(k, onset, offset) {
                            mean + x
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HhSpec {
    pub dt: f64,
    pub duration: f64,
    pub c_m: f64,
    pub stimulus: Stimulus,
    /// |V| above this (mV) marks the run as bad.
    pub bad_bound: f64,
}

impl Default for HhSpec {
    fn default() -> Self {
        HhSpec {
            dt: 0.025,
            duration: 240.0,
            c_m: 1.0,
            stimulus: Stimulus::Step { amplitude: 2.5, onset: 60.0, offset: 240.0 },
            bad_bound: 500.0,
        }
    }
}

impl HhSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.duration > self.dt) {
            return Err(Error::InvalidArgument("duration must exceed dt".into()));
        }
        if !(self.c_m > 0.0) {
            return Err(Error::InvalidArgument("membrane capacitance must be positive".into()));
        }
        if self.stimulus.onset() > self.stimulus.offset() {
            return Err(Error::InvalidArgument("stimulus onset must precede offset".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HhOutput {
    pub trace: Trace,
    pub bad: bool,
}

#[inline]
fn efun(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

struct Kinetics {
    v_t: f64,
    k_bn1: f64,
    k_bn2: f64,
    tau_max: f64,
}

impl Kinetics {
    #[inline]
    fn m(&self, v: f64) -> (f64, f64) {
        let a = 0.32 * efun(-0.25 * (v - self.v_t - 13.0)) / 0.25;
        let b = 0.28 * efun(0.2 * (v - self.v_t - 40.0)) / 0.2;
        (a, b)
    }

    #[inline]
    fn h(&self, v: f64) -> (f64, f64) {
        let a = 0.128 * (-(v - self.v_t - 17.0) / 18.0).exp();
        let b = 4.0 / (1.0 + (-0.2 * (v - self.v_t - 40.0)).exp());
        (a, b)
    }

    #[inline]
    fn n(&self, v: f64) -> (f64, f64) {
        let a = 0.032 * efun(-0.2 * (v - self.v_t - 15.0)) / 0.2;
        let b = self.k_bn1 * (-(v - self.v_t - 10.0) / self.k_bn2).exp();
        (a, b)
    }

    /// Steady state and time constant of the slow potassium gate.
    #[inline]
    fn p(&self, v: f64) -> (f64, f64) {
        let x = v + 35.0;
        let inf = 1.0 / (1.0 + (-0.1 * x).exp());
        let tau = self.tau_max / (3.3 * (0.05 * x).exp() + (-0.05 * x).exp());
        (inf, tau)
    }
}

#[inline]
fn relax(x: f64, inf: f64, decay: f64) -> f64 {
    (inf + (x - inf) * decay).clamp(0.0, 1.0)
}

/// Simulate the voltage trace at log-absolute parameters `theta`.
pub fn simulate_hh(spec: &HhSpec, theta: &[f64], rng: &mut Rng) -> Result<HhOutput> {
    check_dim(12, theta.len())?;
    let p = from_log_abs(theta);
    let [g_leak, g_na, g_k, g_m, e_leak, e_na, e_k, v_t, sigma, k_bn1, k_bn2, tau_max] =
        <[f64; 12]>::try_from(p.as_slice()).expect("length checked");
    let kin = Kinetics { v_t, k_bn1, k_bn2, tau_max };
    let steps = spec.steps();
    let dt = spec.dt;
    let stimulus = spec.stimulus.sample(dt, steps);
    let noise = sigma / dt.sqrt();

    let mut v = e_leak;
    let steady = |(a, b): (f64, f64)| a / (a + b);
    let mut m = steady(kin.m(v));
    let mut h = steady(kin.h(v));
    let mut n = steady(kin.n(v));
    let mut pg = kin.p(v).0;

    let mut signal = Vec::with_capacity(steps);
    let mut bad = false;
    for &i_inj in &stimulus {
        signal.push(v);
        let (am, bm) = kin.m(v);
        let (ah, bh) = kin.h(v);
        let (an, bn) = kin.n(v);
        let (p_inf, tau_p) = kin.p(v);
        m = relax(m, am / (am + bm), (-dt * (am + bm)).exp());
        h = relax(h, ah / (ah + bh), (-dt * (ah + bh)).exp());
        n = relax(n, an / (an + bn), (-dt * (an + bn)).exp());
        pg = relax(pg, p_inf, (-dt / tau_p).exp());
        debug_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&h));
        debug_assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&pg));

        let gna = g_na * m * m * m * h;
        let gk = g_k * n * n * n * n;
        let gm = g_m * pg;
        let g_tot = g_leak + gna + gk + gm;
        let xi: f64 = if sigma != 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        let drive = g_leak * e_leak + gna * e_na + (gk + gm) * e_k + i_inj + noise * xi;
        let v_inf = drive / g_tot;
        v = v_inf + (v - v_inf) * (-dt * g_tot / spec.c_m).exp();
        if !v.is_finite() || v.abs() > spec.bad_bound {
            bad = true;
            break;
        }
    }
    // pad an aborted run so every trace has the nominal length
    signal.resize(steps, *signal.last().unwrap_or(&e_leak));
    Ok(HhOutput { trace: Trace { dt, channel: "V".into(), signal, stimulus }, bad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::count_spikes;
    use crate::rng::rng_from_seed;

    fn truth() -> Vec<f64> {
        to_log_abs(&HH_GROUND_TRUTH)
    }

    fn noiseless() -> Vec<f64> {
        let mut p = HH_GROUND_TRUTH;
        p[8] = 1e-300;
        to_log_abs(&p)
    }

    #[test]
    fn log_abs_round_trip() {
        let back = from_log_abs(&truth());
        for (a, b) in back.iter().zip(HH_GROUND_TRUTH) {
            assert!((a - b).abs() < 1e-12 * b.abs());
        }
    }

    #[test]
    fn no_current_settles_at_rest() {
        let spec = HhSpec { stimulus: Stimulus::Step { amplitude: 0.0, onset: 60.0, offset: 240.0 }, ..HhSpec::default() };
        let out = simulate_hh(&spec, &noiseless(), &mut rng_from_seed(0)).unwrap();
        assert!(!out.bad);
        assert_eq!(count_spikes(&out.trace, -10.0, 2.0), 0);
        let tail = &out.trace.signal[out.trace.len() * 3 / 4..];
        let rest = *tail.last().unwrap();
        assert!(tail.iter().all(|v| (v - rest).abs() < 2.0));
    }

    #[test]
    fn ground_truth_spikes_a_few_times() {
        let out = simulate_hh(&HhSpec::default(), &truth(), &mut rng_from_seed(1)).unwrap();
        let k = count_spikes(&out.trace, -10.0, 2.0);
        assert!((4..=8).contains(&k), "{k} spikes");
    }

    #[test]
    fn firing_increases_with_current() {
        let mut last = 0;
        for amp in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let spec = HhSpec { dt: 0.0125, stimulus: Stimulus::Step { amplitude: amp, onset: 60.0, offset: 240.0 }, ..HhSpec::default() };
            let out = simulate_hh(&spec, &noiseless(), &mut rng_from_seed(0)).unwrap();
            let k = count_spikes(&out.trace, -10.0, 2.0);
            assert!(k >= last, "amplitude {amp}: {k} < {last}");
            last = k;
        }
        assert!(last > 0);
    }

    #[test]
    fn halving_dt_preserves_spiking() {
        let count = |dt: f64| {
            let spec = HhSpec { dt, ..HhSpec::default() };
            count_spikes(&simulate_hh(&spec, &noiseless(), &mut rng_from_seed(0)).unwrap().trace, -10.0, 2.0)
        };
        assert_eq!(count(0.025), count(0.0125));
    }

    #[test]
    fn voltage_converges_under_dt_halving() {
        // first-order scheme: spike onsets shift by O(dt), so the voltage bound
        // needs a finer base step than the default
        let coarse_spec = HhSpec { dt: 0.005, ..HhSpec::default() };
        let fine_spec = HhSpec { dt: 0.0025, ..HhSpec::default() };
        let coarse = simulate_hh(&coarse_spec, &noiseless(), &mut rng_from_seed(0)).unwrap();
        let fine = simulate_hh(&fine_spec, &noiseless(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(count_spikes(&coarse.trace, -10.0, 2.0), count_spikes(&fine.trace, -10.0, 2.0));
        let max_dv = coarse.trace.signal.iter().enumerate().map(|(k, v)| (v - fine.trace.signal[2 * k]).abs()).fold(0.0, f64::max);
        assert!(max_dv < 1.0, "max |ΔV| = {max_dv}");
    }

    #[test]
    fn reproducible_with_noise() {
        let a = simulate_hh(&HhSpec::default(), &truth(), &mut rng_from_seed(3)).unwrap();
        let b = simulate_hh(&HhSpec::default(), &truth(), &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coloured_noise_stimulus_is_frozen() {
        let s = Stimulus::ColouredNoise { mean: 1.0, std: 0.5, tau: 5.0, seed: 9, onset: 10.0, offset: 200.0 };
        let a = s.sample(0.025, 9600);
        assert_eq!(a, s.sample(0.025, 9600));
        assert_eq!(a[0], 0.0);
        assert!(a[1000] != 0.0);
    }
}
