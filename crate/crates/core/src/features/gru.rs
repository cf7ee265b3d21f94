use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;
use crate::simulators::Trace;

pub const GRU_V_REST: f64 = -70.0;
pub const GRU_V_SCALE: f64 = 25.0;

/// Many-to-one gated recurrent unit layer.
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)        r = σ(W_r x + U_r h + b_r)
/// ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
///
/// Weights are one flat slice laid out as
/// `[W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h]`, matrices row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruFeaturizer {
    pub hidden: usize,
    pub input: usize,
}

impl Default for GruFeaturizer {
    fn default() -> Self {
        GruFeaturizer { hidden: 25, input: 2 }
    }
}

/// Activations recorded by [`GruFeaturizer::forward_tape`] for backpropagation.
#[derive(Debug, Clone)]
pub struct GruTape {
    /// Hidden states `h_0 … h_T`, each of length `hidden`.
    pub h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hhat: Vec<f64>,
}

impl GruTape {
    pub fn final_state(&self, hidden: usize) -> &[f64] {
        &self.h[self.h.len() - hidden..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct View<'a> {
    w: [&'a [f64]; 3],
    u: [&'a [f64]; 3],
    b: [&'a [f64]; 3],
}

impl GruFeaturizer {
    pub fn n_params(&self) -> usize {
        3 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (h, i) = (self.hidden, self.input);
        (h * i, h * h, h)
    }

    fn view<'a>(&self, w: &'a [f64]) -> View<'a> {
        let (wi, wh, wb) = self.offsets();
        let (ws, rest) = w.split_at(3 * wi);
        let (us, bs) = rest.split_at(3 * wh);
        View {
            w: [&ws[..wi], &ws[wi..2 * wi], &ws[2 * wi..]],
            u: [&us[..wh], &us[wh..2 * wh], &us[2 * wh..]],
            b: [&bs[..wb], &bs[wb..2 * wb], &bs[2 * wb..]],
        }
    }

    /// Uniform `±1/√hidden` initialisation.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let s = 1.0 / (self.hidden as f64).sqrt();
        (0..self.n_params()).map(|_| rng.random_range(-s..s)).collect()
    }

    fn check(&self, w: &[f64], seq: &[f64]) -> Result<usize> {
        check_dim(self.n_params(), w.len())?;
        if !seq.len().is_multiple_of(self.input) {
            return Err(Error::DimensionMismatch { expected: self.input, got: seq.len() % self.input });
        }
        Ok(seq.len() / self.input)
    }

    /// Final hidden state for a flattened input sequence (`steps × input`).
    pub fn forward(&self, w: &[f64], seq: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_tape(w, seq)?;
        Ok(tape.final_state(self.hidden).to_vec())
    }

    pub fn forward_tape(&self, w: &[f64], seq: &[f64]) -> Result<GruTape> {
        let steps = self.check(w, seq)?;
        let (hd, id) = (self.hidden, self.input);
        let p = self.view(w);
        let mut tape =
            GruTape { h: vec![0.0; (steps + 1) * hd], z: vec![0.0; steps * hd], r: vec![0.0; steps * hd], hhat: vec![0.0; steps * hd] };
        let mut rh = vec![0.0; hd];
        for t in 0..steps {
            let x = &seq[t * id..(t + 1) * id];
            let (past, future) = tape.h.split_at_mut((t + 1) * hd);
            let h = &past[t * hd..];
            let hn = &mut future[..hd];
            for j in 0..hd {
                let mut az = p.b[0][j];
                let mut ar = p.b[1][j];
                for (k, xk) in x.iter().enumerate() {
                    az += p.w[0][j * id + k] * xk;
                    ar += p.w[1][j * id + k] * xk;
                }
                for (k, hk) in h.iter().enumerate() {
                    az += p.u[0][j * hd + k] * hk;
                    ar += p.u[1][j * hd + k] * hk;
                }
                tape.z[t * hd + j] = sigmoid(az);
                tape.r[t * hd + j] = sigmoid(ar);
                rh[j] = tape.r[t * hd + j] * h[j];
            }
            for j in 0..hd {
                let mut a = p.b[2][j];
                for (k, xk) in x.iter().enumerate() {
                    a += p.w[2][j * id + k] * xk;
                }
                for (k, v) in rh.iter().enumerate() {
                    a += p.u[2][j * hd + k] * v;
                }
                let c = a.tanh();
                tape.hhat[t * hd + j] = c;
                let z = tape.z[t * hd + j];
                hn[j] = (1.0 - z) * h[j] + z * c;
            }
        }
        if tape.final_state(hd).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
        Ok(tape)
    }

    /// Backpropagation through time from `dL/dh_T`; accumulates into `grad`.
    pub fn backward(&self, w: &[f64], seq: &[f64], tape: &GruTape, g_final: &[f64], grad: &mut [f64]) -> Result<()> {
        let steps = self.check(w, seq)?;
        check_dim(self.hidden, g_final.len())?;
        check_dim(self.n_params(), grad.len())?;
        let (hd, id) = (self.hidden, self.input);
        let p = self.view(w);
        let (wi, wh, wb) = self.offsets();
        let (gw, rest) = grad.split_at_mut(3 * wi);
        let (gu, gb) = rest.split_at_mut(3 * wh);

        let mut gh = g_final.to_vec();
        let mut gh_prev = vec![0.0; hd];
        let mut ga = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
        let mut grh = vec![0.0; hd];
        for t in (0..steps).rev() {
            let x = &seq[t * id..(t + 1) * id];
            let h = &tape.h[t * hd..(t + 1) * hd];
            let z = &tape.z[t * hd..(t + 1) * hd];
            let r = &tape.r[t * hd..(t + 1) * hd];
            let c = &tape.hhat[t * hd..(t + 1) * hd];
            for j in 0..hd {
                gh_prev[j] = gh[j] * (1.0 - z[j]);
                ga[0][j] = gh[j] * (c[j] - h[j]) * z[j] * (1.0 - z[j]);
                ga[2][j] = gh[j] * z[j] * (1.0 - c[j] * c[j]);
            }
            // candidate path through r ⊙ h
            grh.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..hd {
                let g = ga[2][j];
                if g == 0.0 {
                    continue;
                }
                let row = &p.u[2][j * hd..(j + 1) * hd];
                let grow = &mut gu[2 * wh + j * hd..2 * wh + (j + 1) * hd];
                for k in 0..hd {
                    grow[k] += g * r[k] * h[k];
                    grh[k] += row[k] * g;
                }
            }
            for k in 0..hd {
                gh_prev[k] += grh[k] * r[k];
                ga[1][k] = grh[k] * h[k] * r[k] * (1.0 - r[k]);
            }
            for gate in 0..3 {
                let gwg = &mut gw[gate * wi..(gate + 1) * wi];
                let gbg = &mut gb[gate * wb..(gate + 1) * wb];
                for j in 0..hd {
                    let g = ga[gate][j];
                    gbg[j] += g;
                    for (k, xk) in x.iter().enumerate() {
                        gwg[j * id + k] += g * xk;
                    }
                }
            }
            for gate in 0..2 {
                let u = p.u[gate];
                let gug = &mut gu[gate * wh..(gate + 1) * wh];
                for j in 0..hd {
                    let g = ga[gate][j];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..hd {
                        gug[j * hd + k] += g * h[k];
                        gh_prev[k] += u[j * hd + k] * g;
                    }
                }
            }
            std::mem::swap(&mut gh, &mut gh_prev);
        }
        Ok(())
    }
}

/// Standardised, subsampled `(V, I)` sequence for the recurrent front end.
pub fn gru_inputs(trace: &Trace, stride: usize, current_scale: f64) -> Vec<f64> {
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(2 * trace.len() / stride + 2);
    for k in (0..trace.len()).step_by(stride) {
        out.push((trace.signal[k] - GRU_V_REST) / GRU_V_SCALE);
        out.push(trace.stimulus[k] / current_scale);
    }
    out
}
