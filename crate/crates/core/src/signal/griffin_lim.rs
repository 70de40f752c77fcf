use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{istft, stft_complex, LinSpectrogram, Waveform};
use crate::error::{invalid, Result};

/// Un-normalised Griffin-Lim estimate plus the spectral error of every iterate.
#[derive(Debug, Clone)]
pub struct GriffinLimTrace {
    pub samples: Vec<f64>,
    /// `‖|STFT(x_k)| − s‖` for `k = 0..=n_iters`, where `x_0` is the random-phase start.
    pub errors: Vec<f64>,
}

impl GriffinLimTrace {
    /// Final error divided by `‖s‖` (zero for a silent target).
    pub fn relative_error(&self, target: &LinSpectrogram) -> f64 {
        let n = target.norm();
        if n == 0.0 {
            0.0
        } else {
            self.errors.last().copied().unwrap_or(0.0) / n
        }
    }
}

fn magnitude_error(est: &[Complex64], target: &[f64]) -> f64 {
    est.iter()
        .zip(target)
        .map(|(c, s)| (c.norm() - s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Griffin-Lim phase recovery, returning the raw estimate and its error trace.
pub fn griffin_lim_traced(s: &LinSpectrogram, n_iters: usize, seed: u64) -> Result<GriffinLimTrace> {
    if n_iters == 0 {
        return Err(invalid("griffin_lim needs at least one iteration"));
    }
    if s.frames == 0 {
        return Err(invalid("empty spectrogram"));
    }
    s.framing.validate()?;
    let framing = &s.framing;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Complex64> = s
        .mags
        .iter()
        .map(|&m| Complex64::from_polar(m, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let mut x = istft(&spec, s.frames, framing);
    let mut errors = Vec::with_capacity(n_iters + 1);
    for _ in 0..n_iters {
        let est = stft_complex(&x, framing);
        errors.push(magnitude_error(&est, &s.mags));
        for ((slot, c), &m) in spec.iter_mut().zip(&est).zip(&s.mags) {
            let n = c.norm();
            *slot = if n > 0.0 {
                c * (m / n)
            } else {
                Complex64::new(m, 0.0)
            };
        }
        x = istft(&spec, s.frames, framing);
    }
    errors.push(magnitude_error(&stft_complex(&x, framing), &s.mags));
    Ok(GriffinLimTrace { samples: x, errors })
}

/// Griffin-Lim vocoder: seeded random initial phase, `n_iters` projections,
/// output peak-normalised to `[-1, 1]`.
pub fn griffin_lim(s: &LinSpectrogram, n_iters: usize, seed: u64) -> Result<Waveform> {
    let trace = griffin_lim_traced(s, n_iters, seed)?;
    Ok(Waveform::new(trace.samples, s.framing.sample_rate)?.peak_normalized(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Framing;

    #[test]
    fn silent_target_gives_silence() {
        let framing = Framing::default();
        let s = LinSpectrogram::new(vec![0.0; 5 * framing.bins()], 5, framing).unwrap();
        let w = griffin_lim(&s, 3, 1).unwrap();
        assert_eq!(w.len(), framing.span(5));
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_iterations_rejected() {
        let framing = Framing::default();
        let s = LinSpectrogram::new(vec![0.0; framing.bins()], 1, framing).unwrap();
        assert!(griffin_lim(&s, 0, 1).is_err());
    }
}
