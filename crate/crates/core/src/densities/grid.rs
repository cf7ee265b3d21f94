use serde::{Deserialize, Serialize};

use super::BoxUniform;
use crate::error::{Error, Result};
use crate::simulators::GmSpec;

/// Evenly spaced one-dimensional grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 {
            return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] with {n} points")));
        }
        Ok(Grid1d { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + self.step() * i as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Trapezoid integral of equally spaced samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let inner: f64 = values[1..self.n - 1].iter().sum();
        self.step() * (inner + 0.5 * (values[0] + values[self.n - 1]))
    }
}

/// Density values on a grid, normalised by the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Grid1d,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Normalise unnormalised log-density values.
    pub fn from_log_values(grid: Grid1d, log_values: &[f64]) -> Result<Self> {
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidArgument("density vanishes on the whole grid".into()));
        }
        let raw: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();
        let z = grid.integrate(&raw);
        Ok(GridDensity { grid, values: raw.into_iter().map(|v| v / z).collect() })
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Mass of the set selected by `keep`, by trapezoid integration.
    pub fn mass_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let masked: Vec<f64> = self.grid.points().iter().zip(&self.values).map(|(x, v)| if keep(*x) { *v } else { 0.0 }).collect();
        self.grid.integrate(&masked)
    }

    pub fn mean(&self) -> f64 {
        let xs: Vec<f64> = self.grid.points().iter().zip(&self.values).map(|(x, v)| x * v).collect();
        self.grid.integrate(&xs)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xs: Vec<f64> = self.grid.points().iter().zip(&self.values).map(|(x, v)| (x - m).powi(2) * v).collect();
        self.grid.integrate(&xs)
    }
}

/// Exact posterior of the scalar mixture-model parameter on a grid.
///
/// The posterior is the product of the mixture likelihoods of every observed
/// draw in `x_o`, restricted to the prior box.
pub fn analytic_gm_posterior(spec: &GmSpec, prior: &BoxUniform, x_o: &[f64], grid: Grid1d) -> Result<GridDensity> {
    if prior.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: prior.dim() });
    }
    if grid.lo > prior.lower[0] || grid.hi < prior.upper[0] {
        return Err(Error::InvalidArgument("grid must cover the prior support".into()));
    }
    let logs: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| if prior.contains(&[t]) { x_o.iter().map(|&x| spec.log_likelihood(x, t)).sum() } else { f64::NEG_INFINITY })
        .collect();
    GridDensity::from_log_values(grid, &logs)
}

/// `KL(p ‖ q)` on `[lo, hi]`, both densities renormalised to the window.
pub fn grid_kl(p: &GridDensity, log_q: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<f64> {
    let window = Grid1d::new(lo, hi, n)?;
    let xs = window.points();
    // linear interpolation of p onto the window grid
    let h = p.grid.step();
    let p_at = |x: f64| -> f64 {
        let u = ((x - p.grid.lo) / h).clamp(0.0, (p.grid.n - 1) as f64);
        let i = (u.floor() as usize).min(p.grid.n - 2);
        let f = u - i as f64;
        p.values[i] * (1.0 - f) + p.values[i + 1] * f
    };
    let pv: Vec<f64> = xs.iter().map(|&x| p_at(x)).collect();
    let lq: Vec<f64> = xs.iter().map(|&x| log_q(x)).collect();
    let zq = GridDensity::from_log_values(window, &lq)?;
    let zp = window.integrate(&pv);
    let integrand: Vec<f64> = pv
        .iter()
        .zip(&zq.values)
        .map(|(pi, qi)| {
            let pn = pi / zp;
            if pn <= 0.0 {
                0.0
            } else {
                pn * (pn.ln() - qi.ln())
            }
        })
        .collect();
    Ok(window.integrate(&integrand))
}
