//! Speech synthesizer: a conditional VAE over target-speaker magnitude
//! spectrograms, and the deterministic CBHG-lite baseline it is compared with.
//!
//! The encoder reads a whole utterance (spectrogram frames next to phoneme
//! posteriors) and emits one Gaussian over a `D_z`-dimensional latent. The
//! decoder sees the posteriors with the latent repeated on every frame, so
//! the latent can only carry what the posteriors do not: chiefly intonation.

mod baseline;
mod cvae;
mod train;

pub use baseline::{baseline_graph, baseline_synthesize, BaselineModel, BaselineSpec};
pub use cvae::{
    decoder_graph, encoder_graph, loss_graph, LossVars, SynthSpec, SynthesizerModel, DEFAULT_HIDDEN,
    DEFAULT_LATENT_DIM,
};
pub use train::{
    auto_mag_scale, fit_baseline, fit_synthesizer, prepare_corpus, train_baseline, train_synthesizer, SynthConfig,
    SynthEpoch, SynthTrainingReport, TrainingUtterance,
};

use crate::error::{invalid, shape_err, Result};
use crate::signal::LinSpectrogram;

/// Diagonal Gaussian `N(mu, diag(sigma²))` over the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(shape_err("posterior", mu.len(), sigma.len()));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("posterior mean is not finite"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("posterior sigma must be positive and finite"));
        }
        Ok(Self { mu, sigma })
    }

    /// `sigma = exp(log_var / 2)`.
    pub fn from_log_var(mu: Vec<f64>, log_var: &[f64]) -> Result<Self> {
        Self::new(mu, log_var.iter().map(|lv| (lv / 2.0).exp()).collect())
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

macro_rules! real_vector {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(v: Vec<f64>) -> Result<Self> {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(concat!($what, " must be nonempty and finite")));
                }
                Ok(Self(v))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            /// Infinity norm.
            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
            }
        }
    };
}

real_vector!(LatentVector, "latent vector");
real_vector!(NoiseVector, "noise vector");

impl NoiseVector {
    /// One value per line, written with round-trip precision.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|v| format!("{v:?}\n")).collect()
    }

    /// Parses one float per line; blank lines and `#` comments are skipped.
    pub fn from_text(s: &str) -> Result<Self> {
        let mut v = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            v.push(
                line.parse::<f64>()
                    .map_err(|e| invalid(format!("noise line {}: {e}", n + 1)))?,
            );
        }
        Self::new(v)
    }
}

/// Loss value with its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `z = mu + sigma ⊙ eps`.
pub fn reparameterize(post: &GaussianPosterior, eps: &NoiseVector) -> Result<LatentVector> {
    if eps.len() != post.dim() {
        return Err(shape_err("reparameterize", post.dim(), eps.len()));
    }
    Ok(LatentVector(
        (0..post.dim())
            .map(|i| post.mu[i] + post.sigma[i] * eps.0[i])
            .collect(),
    ))
}

/// Closed-form `KL(N(mu, sigma²) ‖ N(0, I))`, summed over dimensions.
pub fn kl_divergence(post: &GaussianPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 2.0 * s.ln() - 1.0))
        .sum()
}

/// Single-draw KL estimate `½(‖z‖² − ‖eps‖²) − sum_log_sigma`.
pub fn kl_estimate(z: &[f64], eps: &[f64], sum_log_sigma: f64) -> Result<f64> {
    if z.len() != eps.len() {
        return Err(shape_err("kl_estimate", z.len(), eps.len()));
    }
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let ee: f64 = eps.iter().map(|v| v * v).sum();
    Ok(0.5 * (zz - ee) - sum_log_sigma)
}

/// Mean squared difference over every spectrogram element.
pub fn recon_error(x: &LinSpectrogram, x_hat: &LinSpectrogram) -> Result<f64> {
    if x.frames != x_hat.frames || x.bins() != x_hat.bins() {
        return Err(shape_err(
            "recon_error",
            format!("{}x{}", x.frames, x.bins()),
            format!("{}x{}", x_hat.frames, x_hat.bins()),
        ));
    }
    let n = x.mags.len() as f64;
    Ok(x.mags
        .iter()
        .zip(&x_hat.mags)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `recon + beta · KL`.
pub fn cvae_loss(x: &LinSpectrogram, x_hat: &LinSpectrogram, post: &GaussianPosterior, beta: f64) -> Result<LossParts> {
    let recon = recon_error(x, x_hat)?;
    let kl = kl_divergence(post);
    Ok(LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

/// Either synthesizer variant, as loaded from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthModel {
    Cvae(SynthesizerModel),
    Baseline(BaselineModel),
}
