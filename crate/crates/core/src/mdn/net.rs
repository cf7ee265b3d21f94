//! Per-sample forward and backward passes of the MDN.
//!
//! Every layer computes `z = W h + b`. With weight variances `S²` supplied the
//! pre-activation is sampled directly (local reparameterisation):
//! `z = γ + √δ ε` with `γ = W_m h + b_m`, `δ = S_W² h² + S_b²`, `ε ~ N(0, 1)`.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Activation, MdnArchitecture};
use crate::densities::{log_sum_exp, LN_2PI};
use crate::rng::Rng;

/// `softplus(raw + DIAG_OFFSET) = 1` at `raw = 0`.
pub(crate) const DIAG_OFFSET: f64 = 0.541_324_854_612_918_1;

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) struct Tape {
    /// Inputs of each layer: `h[0]` is the network input.
    h: Vec<Vec<f64>>,
    eps: Vec<Vec<f64>>,
    sd: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

/// `s2` holds `exp(2ρ)` for every weight; `None` runs the mean network.
pub(crate) fn forward(arch: &MdnArchitecture, w: &[f64], s2: Option<&[f64]>, input: Vec<f64>, mut rng: Option<&mut Rng>) -> Tape {
    let shapes = arch.layer_shapes();
    let last = shapes.len() - 1;
    let mut tape = Tape { h: Vec::with_capacity(shapes.len()), eps: Vec::new(), sd: Vec::new(), out: Vec::new() };
    let mut h = input;
    let mut off = 0;
    for (l, &(o, i)) in shapes.iter().enumerate() {
        let (wm, bm) = (&w[off..off + o * i], &w[off + o * i..off + o * i + o]);
        let mut z: Vec<f64> = (0..o).map(|j| bm[j] + dot(&wm[j * i..(j + 1) * i], &h)).collect();
        if let Some(s2) = s2 {
            let (sw, sb) = (&s2[off..off + o * i], &s2[off + o * i..off + o * i + o]);
            let rng = rng.as_deref_mut().expect("stochastic forward needs an rng");
            let mut eps = Vec::with_capacity(o);
            let mut sd = Vec::with_capacity(o);
            for j in 0..o {
                let delta = sb[j] + sw[j * i..(j + 1) * i].iter().zip(&h).map(|(s, x)| s * x * x).sum::<f64>();
                let e: f64 = rng.sample(StandardNormal);
                let r = delta.sqrt();
                z[j] += r * e;
                eps.push(e);
                sd.push(r);
            }
            tape.eps.push(eps);
            tape.sd.push(sd);
        }
        tape.h.push(h);
        off += o * i + o;
        if l == last {
            tape.out = z;
            break;
        }
        h = match arch.activation {
            Activation::Tanh => z.into_iter().map(f64::tanh).collect(),
            Activation::Relu => z.into_iter().map(|v| v.max(0.0)).collect(),
        };
    }
    tape
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulate parameter gradients for upstream gradient `g_out` on the output.
///
/// `g_rho` receives gradients with respect to the log standard deviations and
/// must be supplied exactly when the tape was recorded stochastically.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    arch: &MdnArchitecture,
    w: &[f64],
    s2: Option<&[f64]>,
    tape: &Tape,
    g_out: &[f64],
    g_w: &mut [f64],
    mut g_rho: Option<&mut [f64]>,
    g_in: Option<&mut [f64]>,
) {
    let shapes = arch.layer_shapes();
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for &(o, i) in &shapes {
        offsets.push(off);
        off += o * i + o;
    }
    let mut g = g_out.to_vec();
    let mut g_in = g_in;
    for l in (0..shapes.len()).rev() {
        let (o, i) = shapes[l];
        let off = offsets[l];
        let h = &tape.h[l];
        let wm = &w[off..off + o * i];
        // gradient with respect to δ through z = γ + √δ ε
        let gd: Option<Vec<f64>> = s2.map(|_| (0..o).map(|j| g[j] * tape.eps[l][j] / (2.0 * tape.sd[l][j])).collect());
        {
            let (gw, gb) = g_w[off..off + o * i + o].split_at_mut(o * i);
            for j in 0..o {
                gb[j] += g[j];
                let row = &mut gw[j * i..(j + 1) * i];
                for k in 0..i {
                    row[k] += g[j] * h[k];
                }
            }
        }
        if let (Some(s2), Some(gd), Some(gr)) = (s2, gd.as_ref(), g_rho.as_deref_mut()) {
            let (sw, sb) = (&s2[off..off + o * i], &s2[off + o * i..off + o * i + o]);
            let (grw, grb) = gr[off..off + o * i + o].split_at_mut(o * i);
            for j in 0..o {
                grb[j] += gd[j] * 2.0 * sb[j];
                for k in 0..i {
                    grw[j * i + k] += gd[j] * 2.0 * h[k] * h[k] * sw[j * i + k];
                }
            }
        }
        if l == 0 && g_in.is_none() {
            break;
        }
        let mut gh = vec![0.0; i];
        for j in 0..o {
            let row = &wm[j * i..(j + 1) * i];
            for k in 0..i {
                gh[k] += row[k] * g[j];
            }
        }
        if let (Some(s2), Some(gd)) = (s2, gd.as_ref()) {
            let sw = &s2[off..off + o * i];
            for j in 0..o {
                for k in 0..i {
                    gh[k] += gd[j] * 2.0 * h[k] * sw[j * i + k];
                }
            }
        }
        if l == 0 {
            if let Some(gi) = g_in.take() {
                gi.iter_mut().zip(&gh).for_each(|(a, b)| *a += b);
            }
            break;
        }
        g = match arch.activation {
            Activation::Tanh => gh.iter().zip(h).map(|(gv, hv)| gv * (1.0 - hv * hv)).collect(),
            Activation::Relu => gh.iter().zip(h).map(|(gv, hv)| if *hv > 0.0 { *gv } else { 0.0 }).collect(),
        };
    }
}

/// Parsed mixture head for one component: `(logit, μ, U)` in standardised θ.
pub(crate) struct Component {
    pub logit: f64,
    pub mean: Vec<f64>,
    /// Upper-triangular precision factor, row-major `d × d`.
    pub u: Vec<f64>,
}

pub(crate) fn components(arch: &MdnArchitecture, out: &[f64]) -> Vec<Component> {
    let d = arch.theta_dim;
    let bs = arch.block_size();
    (0..arch.components)
        .map(|k| {
            let blk = &out[k * bs..(k + 1) * bs];
            let mut u = vec![0.0; d * d];
            let mut t = 1 + d;
            for i in 0..d {
                for j in i..d {
                    u[i * d + j] = if i == j { softplus(blk[t] + DIAG_OFFSET) } else { blk[t] };
                    t += 1;
                }
            }
            Component { logit: blk[0], mean: blk[1..1 + d].to_vec(), u }
        })
        .collect()
}

/// `ln q(y)` for standardised `y`, and its gradient with respect to the raw
/// head outputs when `grad` is given (accumulated with factor `scale`).
pub(crate) fn head_log_q(arch: &MdnArchitecture, out: &[f64], y: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
    let d = arch.theta_dim;
    let comps = components(arch, out);
    let logits: Vec<f64> = comps.iter().map(|c| c.logit).collect();
    let lse_logits = log_sum_exp(&logits);
    let mut terms = Vec::with_capacity(comps.len());
    let mut cache = Vec::with_capacity(comps.len());
    for c in &comps {
        let diff: Vec<f64> = y.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
        let u: Vec<f64> = (0..d).map(|i| (i..d).map(|j| c.u[i * d + j] * diff[j]).sum()).collect();
        let log_det: f64 = (0..d).map(|i| c.u[i * d + i].ln()).sum();
        let log_n = -0.5 * d as f64 * LN_2PI + log_det - 0.5 * dot(&u, &u);
        terms.push(c.logit - lse_logits + log_n);
        cache.push((diff, u));
    }
    let log_q = log_sum_exp(&terms);
    if let Some((g, scale)) = grad {
        let bs = arch.block_size();
        for (k, c) in comps.iter().enumerate() {
            let r = (terms[k] - log_q).exp();
            let alpha = (c.logit - lse_logits).exp();
            let (diff, u) = &cache[k];
            let blk = &mut g[k * bs..(k + 1) * bs];
            blk[0] += scale * (r - alpha);
            for j in 0..d {
                // (Uᵀ u)_j
                let ut_u: f64 = (0..=j).map(|i| c.u[i * d + j] * u[i]).sum();
                blk[1 + j] += scale * r * ut_u;
            }
            let raw = &out[k * bs + 1 + d..(k + 1) * bs];
            let mut t = 0;
            #[allow(clippy::needless_range_loop)]
            for i in 0..d {
                for j in i..d {
                    let mut gu = -u[i] * diff[j];
                    if i == j {
                        gu += 1.0 / c.u[i * d + i];
                        gu *= sigmoid(raw[t] + DIAG_OFFSET);
                    }
                    blk[1 + d + t] += scale * r * gu;
                    t += 1;
                }
            }
        }
    }
    log_q
}
