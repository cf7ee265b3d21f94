use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Trace;
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Linear rate neuron with a self-connection: `τ dr/dt = −r + J r + I + σ η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutapseSpec {
    pub i_inj: f64,
    pub sigma: f64,
    pub duration: f64,
    /// Integration step as a fraction of `min(1, |τ|)`.
    pub dt_scale: f64,
    pub r0: f64,
    pub divergence_bound: f64,
}

impl Default for AutapseSpec {
    fn default() -> Self {
        AutapseSpec { i_inj: 1.0, sigma: 0.0, duration: 10.0, dt_scale: 1e-2, r0: 0.0, divergence_bound: 1e6 }
    }
}

impl AutapseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_scale > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.duration > self.dt_scale) {
            return Err(Error::InvalidArgument("duration must exceed dt".into()));
        }
        if !(self.sigma >= 0.0) || !(self.divergence_bound > 0.0) {
            return Err(Error::InvalidArgument("noise scale and divergence bound must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self, tau: f64) -> f64 {
        self.dt_scale * tau.abs().min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutapseOutput {
    pub trace: Trace,
    pub bad: bool,
}

// |τ| below this is treated as a degenerate, non-simulable setting
const MIN_ABS_TAU: f64 = 1e-6;

/// Euler–Maruyama integration of the autapse model at `θ = (J, τ)`.
///
/// A run is flagged bad when it leaves the divergence bound, turns non-finite,
/// or its fitted drift `d r/dt ≈ a r + c` has `a > 0`, i.e. the trajectory is
/// on an exponentially growing branch even if it has not yet hit the bound.
pub fn simulate_autapse(spec: &AutapseSpec, theta: &[f64], rng: &mut Rng) -> Result<AutapseOutput> {
    check_dim(2, theta.len())?;
    let (j, tau) = (theta[0], theta[1]);
    if tau.abs() < MIN_ABS_TAU || !j.is_finite() {
        return Ok(AutapseOutput {
            trace: Trace { dt: spec.dt_scale, channel: "r".into(), signal: vec![spec.r0], stimulus: vec![spec.i_inj] },
            bad: true,
        });
    }
    let dt = spec.dt(tau);
    let steps = (spec.duration / dt).round() as usize;
    let noise_scale = spec.sigma * dt.sqrt() / tau;
    let mut r = spec.r0;
    let mut signal = Vec::with_capacity(steps + 1);
    signal.push(r);
    let mut bad = false;
    for _ in 0..steps {
        let eta: f64 = if spec.sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        r += dt / tau * ((j - 1.0) * r + spec.i_inj) + noise_scale * eta;
        signal.push(r);
        if !r.is_finite() || r.abs() > spec.divergence_bound {
            bad = true;
            break;
        }
    }
    if !bad {
        bad = drift_slope(&signal, dt) > GROWTH_TOL;
    }
    let stimulus = vec![spec.i_inj; signal.len()];
    Ok(AutapseOutput { trace: Trace { dt, channel: "r".into(), signal, stimulus }, bad })
}

const GROWTH_TOL: f64 = 1e-6;

/// Least-squares slope `a` of the increments on the state, `Δr/dt ≈ a r + c`.
fn drift_slope(r: &[f64], dt: f64) -> f64 {
    let n = r.len() - 1;
    if n < 2 {
        return 0.0;
    }
    let xs = &r[..n];
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = (r[n] - r[0]) / (n as f64 * dt);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for k in 0..n {
        let dx = xs[k] - mx;
        sxy += dx * ((r[k + 1] - r[k]) / dt - my);
        sxx += dx * dx;
    }
    if sxx <= f64::EPSILON * (1.0 + mx * mx) * n as f64 {
        return 0.0;
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn converges_to_fixed_point() {
        let spec = AutapseSpec { duration: 60.0, ..AutapseSpec::default() };
        let out = simulate_autapse(&spec, &[0.75, 1.0], &mut rng_from_seed(0)).unwrap();
        assert!(!out.bad);
        let last = *out.trace.signal.last().unwrap();
        // fixed point I/(1−J) = 4 I
        assert!((last - 4.0 * spec.i_inj).abs() < 1e-3, "{last}");
    }

    #[test]
    fn unstable_coupling_is_flagged() {
        let out = simulate_autapse(&AutapseSpec::default(), &[1.5, 1.0], &mut rng_from_seed(0)).unwrap();
        assert!(out.bad);
        // barely unstable runs never reach the bound but are still flagged
        let out = simulate_autapse(&AutapseSpec::default(), &[1.02, 2.5], &mut rng_from_seed(0)).unwrap();
        assert!(out.trace.signal.iter().all(|r| r.abs() < 1e3));
        assert!(out.bad);
    }

    #[test]
    fn relaxation_matches_closed_form() {
        let tau = 1.0;
        let spec = AutapseSpec { dt_scale: 1e-3, ..AutapseSpec::default() };
        let out = simulate_autapse(&spec, &[0.0, tau], &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.trace.dt, 1e-3);
        let err = out
            .trace
            .signal
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let t = k as f64 * out.trace.dt;
                (r - spec.i_inj * (1.0 - (-t / tau).exp())).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn deterministic_flag_matches_analytic_boundary() {
        let spec = AutapseSpec::default();
        for ji in 0..=20 {
            for ti in 1..=10 {
                let j = 0.1 * ji as f64;
                let tau = 0.25 * ti as f64;
                let out = simulate_autapse(&spec, &[j, tau], &mut rng_from_seed(1)).unwrap();
                assert_eq!(out.bad, j > 1.0, "J={j} τ={tau}");
                // negative time constants mirror the stability region
                let out = simulate_autapse(&spec, &[j, -tau.min(1.0)], &mut rng_from_seed(1)).unwrap();
                assert_eq!(out.bad, j < 1.0, "J={j} τ=-{tau}");
            }
        }
    }

    #[test]
    fn noisy_runs_are_reproducible() {
        let spec = AutapseSpec { sigma: 0.5, ..AutapseSpec::default() };
        let a = simulate_autapse(&spec, &[0.5, 1.0], &mut rng_from_seed(4)).unwrap();
        let b = simulate_autapse(&spec, &[0.5, 1.0], &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, b);
    }
}
