//! Inverse autoregressive flow on the utterance latent.
//!
//! Each step is one masked dense layer producing a shift `m` and log-scale
//! `s` from the incoming latent, then `z' = m + exp(s) ⊙ z`. The mask makes
//! output `i` see only inputs earlier in the step's ordering, so the Jacobian
//! is triangular and `log|det| = Σ s`. Odd steps use the reversed ordering.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::neural::{glorot, Graph, NetworkParams, Real, Tensor, Var};
use crate::synth::{kl_estimate, recon_error, GaussianPosterior, LatentVector, LossParts, NoiseVector};
use crate::signal::LinSpectrogram;

pub const DEFAULT_FLOW_STEPS: usize = 4;

/// Log-scales are clamped to this range before exponentiation.
pub const LOG_SCALE_LIMIT: f64 = 7.0;

/// Whether output `i` may read input `j` under the given ordering.
pub fn mask_allows(reversed: bool, i: usize, j: usize) -> bool {
    if reversed {
        j > i
    } else {
        j < i
    }
}

/// `D × D` mask, entry `[j * D + i]` for input `j` feeding output `i`.
pub fn mask(dim: usize, reversed: bool) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for j in 0..dim {
        for i in 0..dim {
            if mask_allows(reversed, i, j) {
                m[j * dim + i] = 1.0;
            }
        }
    }
    m
}

/// Parameters of one flow step. Weights are stored unmasked; the mask is
/// applied on every use, so arbitrary values stay autoregressive.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStepParams {
    pub dim: usize,
    pub w_m: Vec<f64>,
    pub b_m: Vec<f64>,
    pub w_s: Vec<f64>,
    pub b_s: Vec<f64>,
    pub reversed: bool,
}

impl FlowStepParams {
    pub fn identity(dim: usize, reversed: bool) -> Self {
        Self {
            dim,
            w_m: vec![0.0; dim * dim],
            b_m: vec![0.0; dim],
            w_s: vec![0.0; dim * dim],
            b_s: vec![0.0; dim],
            reversed,
        }
    }

    /// Uniform values in `±scale`.
    pub fn random<R: Rng>(dim: usize, reversed: bool, scale: f64, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<_>>();
        Self {
            dim,
            w_m: draw(dim * dim),
            b_m: draw(dim),
            w_s: draw(dim * dim),
            b_s: draw(dim),
            reversed,
        }
    }

    /// Shift and clamped log-scale for an incoming latent.
    pub fn shift_log_scale(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut m = self.b_m.clone();
        let mut s = self.b_s.clone();
        for j in 0..d {
            for i in 0..d {
                if mask_allows(self.reversed, i, j) {
                    m[i] += z[j] * self.w_m[j * d + i];
                    s[i] += z[j] * self.w_s[j * d + i];
                }
            }
        }
        s.iter_mut()
            .for_each(|v| *v = v.clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT));
        (m, s)
    }

    /// Coordinates in the order the step's autoregression runs.
    fn order(&self) -> Vec<usize> {
        if self.reversed {
            (0..self.dim).rev().collect()
        } else {
            (0..self.dim).collect()
        }
    }
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(shape_err(what, format!("dimension {expected}"), got));
    }
    Ok(())
}

/// One step: `(z_out, Σ s)`.
pub fn iaf_step(p: &FlowStepParams, z_in: &LatentVector) -> Result<(LatentVector, f64)> {
    check_dim("iaf_step", p.dim, z_in.len())?;
    let (m, s) = p.shift_log_scale(&z_in.0);
    let z = (0..p.dim).map(|i| m[i] + s[i].exp() * z_in.0[i]).collect();
    Ok((LatentVector(z), s.iter().sum()))
}

/// Forward pass from noise to `z_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub eps: NoiseVector,
    pub z0: LatentVector,
    /// `z_1 … z_T`, one per step.
    pub zs: Vec<LatentVector>,
    /// `Σ log σ_enc + Σ_t Σ_i s_{t,i}`.
    pub sum_log_sigma: f64,
}

impl FlowTrace {
    pub fn z_final(&self) -> &LatentVector {
        self.zs.last().unwrap_or(&self.z0)
    }
}

/// Reparameterises `eps` through the posterior, then applies every step in order.
pub fn iaf_chain(post: &GaussianPosterior, eps: &NoiseVector, steps: &[FlowStepParams]) -> Result<FlowTrace> {
    let d = post.dim();
    check_dim("iaf_chain eps", d, eps.len())?;
    for s in steps {
        check_dim("iaf_chain step", d, s.dim)?;
    }
    let z0 = crate::synth::reparameterize(post, eps)?;
    let mut sum_log_sigma: f64 = post.sigma.iter().map(|s| s.ln()).sum();
    let mut zs = Vec::with_capacity(steps.len());
    let mut z = z0.clone();
    for s in steps {
        let (next, ls) = iaf_step(s, &z)?;
        sum_log_sigma += ls;
        zs.push(next.clone());
        z = next;
    }
    Ok(FlowTrace {
        eps: eps.clone(),
        z0,
        zs,
        sum_log_sigma,
    })
}

/// Inverts one step coordinate by coordinate along its ordering.
pub fn iaf_step_inverse(p: &FlowStepParams, z_out: &LatentVector) -> Result<LatentVector> {
    check_dim("iaf_step_inverse", p.dim, z_out.len())?;
    let mut z = vec![0.0; p.dim];
    for i in p.order() {
        // m_i and s_i depend only on coordinates already recovered
        let (m, s) = p.shift_log_scale(&z);
        z[i] = (z_out.0[i] - m[i]) / s[i].exp();
    }
    Ok(LatentVector(z))
}

/// Recovers `eps` from `z_T` for the same posterior and steps.
pub fn iaf_inverse(post: &GaussianPosterior, steps: &[FlowStepParams], z_t: &LatentVector) -> Result<NoiseVector> {
    check_dim("iaf_inverse", post.dim(), z_t.len())?;
    let mut z = z_t.clone();
    for s in steps.iter().rev() {
        z = iaf_step_inverse(s, &z)?;
    }
    Ok(NoiseVector(
        (0..post.dim())
            .map(|i| (z.0[i] - post.mu[i]) / post.sigma[i])
            .collect(),
    ))
}

/// Reconstruction plus the single-sample flow KL estimate.
pub fn iaf_loss(x: &LinSpectrogram, x_hat: &LinSpectrogram, trace: &FlowTrace, beta: f64) -> Result<LossParts> {
    let recon = recon_error(x, x_hat)?;
    let kl = kl_estimate(&trace.z_final().0, &trace.eps.0, trace.sum_log_sigma)?;
    Ok(LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

/// Parameter names of step `t`.
pub fn step_param_names(t: usize) -> [String; 4] {
    ["w_m", "b_m", "w_s", "b_s"].map(|k| format!("flow.{t}.{k}"))
}

/// Step `t` reverses the ordering when `t` is odd.
pub fn step_reversed(t: usize) -> bool {
    t % 2 == 1
}

/// Flow parameters for `steps` steps. Weights start small and biases at zero,
/// so the untrained flow is close to the identity.
pub fn init_flow<T: Real, R: Rng>(dim: usize, steps: usize, rng: &mut R) -> NetworkParams<T> {
    let mut p = NetworkParams::new();
    for t in 0..steps {
        let [w_m, b_m, w_s, b_s] = step_param_names(t);
        p.insert(w_m, glorot::<T, R>(rng, dim, dim).map(|v| v * T::of(0.1)));
        p.insert(b_m, Tensor::zeros(&[dim]));
        p.insert(w_s, glorot::<T, R>(rng, dim, dim).map(|v| v * T::of(0.1)));
        p.insert(b_s, Tensor::zeros(&[dim]));
    }
    p
}

/// Reads step parameters out of a parameter store as `f64`.
pub fn flow_steps<T: Real>(params: &NetworkParams<T>, dim: usize, steps: usize) -> Result<Vec<FlowStepParams>> {
    (0..steps)
        .map(|t| {
            let names = step_param_names(t);
            let mut vals = Vec::with_capacity(4);
            for (k, name) in names.iter().enumerate() {
                let tensor = params.get(name)?;
                let want = if k % 2 == 0 { dim * dim } else { dim };
                if tensor.len() != want {
                    return Err(shape_err(name, want, tensor.len()));
                }
                vals.push(tensor.data().iter().map(|v| v.f64()).collect::<Vec<f64>>());
            }
            let mut it = vals.into_iter();
            Ok(FlowStepParams {
                dim,
                w_m: it.next().unwrap_or_default(),
                b_m: it.next().unwrap_or_default(),
                w_s: it.next().unwrap_or_default(),
                b_s: it.next().unwrap_or_default(),
                reversed: step_reversed(t),
            })
        })
        .collect()
}

/// Writes step parameters into a store under the standard names.
pub fn flow_params<T: Real>(steps: &[FlowStepParams]) -> Result<NetworkParams<T>> {
    let mut p = NetworkParams::new();
    for (t, s) in steps.iter().enumerate() {
        if s.reversed != step_reversed(t) {
            return Err(invalid(format!("flow step {t} has the wrong ordering")));
        }
        let d = s.dim;
        let conv = |v: &[f64], shape: &[usize]| Tensor::new(shape.to_vec(), v.iter().map(|&x| T::of(x)).collect());
        let [w_m, b_m, w_s, b_s] = step_param_names(t);
        p.insert(w_m, conv(&s.w_m, &[d, d])?);
        p.insert(b_m, conv(&s.b_m, &[d])?);
        p.insert(w_s, conv(&s.w_s, &[d, d])?);
        p.insert(b_s, conv(&s.b_s, &[d])?);
    }
    Ok(p)
}

/// Graph form of the chain on a `1 × D` latent. Returns `z_T` and `Σ_t Σ_i s`
/// (a `1 × 1` node), or `None` for the sum when there are no steps.
pub fn flow_graph<T: Real>(
    g: &mut Graph<T>,
    params: &NetworkParams<T>,
    z0: Var,
    steps: usize,
) -> Result<(Var, Option<Var>)> {
    let (_, dim) = g.shape(z0);
    let mut z = z0;
    let mut total: Option<Var> = None;
    for t in 0..steps {
        let [w_m, b_m, w_s, b_s] = step_param_names(t);
        let mk = g.constant(Tensor::matrix(
            dim,
            dim,
            mask(dim, step_reversed(t)).into_iter().map(T::of).collect(),
        ));
        let w_m = g.param(params, &w_m)?;
        let w_s = g.param(params, &w_s)?;
        let b_m = g.param(params, &b_m)?;
        let b_s = g.param(params, &b_s)?;
        let wm = g.mul(w_m, mk)?;
        let ws = g.mul(w_s, mk)?;
        let m = g.matmul(z, wm)?;
        let m = g.add_row(m, b_m)?;
        let s = g.matmul(z, ws)?;
        let s = g.add_row(s, b_s)?;
        let s = g.clamp(s, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT);
        let e = g.exp(s);
        let ez = g.mul(e, z)?;
        z = g.add(m, ez)?;
        let ss = g.sum(s);
        total = Some(match total {
            Some(acc) => g.add(acc, ss)?,
            None => ss,
        });
    }
    Ok((z, total))
}
