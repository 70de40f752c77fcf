use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Framing, LinSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex half-spectrum STFT, `frames × (n_fft/2 + 1)`.
pub(crate) fn stft_complex(samples: &[f64], framing: &Framing) -> Vec<Complex64> {
    let frames = framing.frame_count(samples.len());
    let bins = framing.bins();
    let window = hann(framing.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(framing.n_fft);
    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); framing.n_fft];
    for t in 0..frames {
        let start = t * framing.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i] = Complex64::new(samples[start + i] * w, 0.0);
        }
        fft.process(&mut buf);
        out.extend_from_slice(&buf[..bins]);
    }
    out
}

/// Least-squares inverse of [`stft_complex`]: windowed overlap-add divided by
/// the summed squared window.
pub(crate) fn istft(spec: &[Complex64], frames: usize, framing: &Framing) -> Vec<f64> {
    let n = framing.n_fft;
    let bins = framing.bins();
    let len = framing.span(frames);
    let window = hann(framing.frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut acc = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let half = &spec[t * bins..(t + 1) * bins];
        buf[..bins].copy_from_slice(half);
        for k in bins..n {
            buf[k] = half[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * framing.hop;
        for (i, w) in window.iter().enumerate() {
            acc[start + i] += w * buf[i].re;
            wsum[start + i] += w * w;
        }
    }
    let scale = n as f64;
    acc.iter()
        .zip(&wsum)
        .map(|(a, w)| if *w > 1e-12 { a / (w * scale) } else { 0.0 })
        .collect()
}

/// Magnitude STFT with a periodic Hann window, no padding.
pub fn stft(w: &Waveform, frame_len: usize, hop: usize, n_fft: usize) -> Result<LinSpectrogram> {
    let framing = Framing {
        frame_len,
        hop,
        n_fft,
        sample_rate: w.sample_rate,
    };
    framing.validate()?;
    if w.len() < frame_len {
        return Err(Error::TooShort {
            len: w.len(),
            needed: frame_len,
        });
    }
    let frames = framing.frame_count(w.len());
    let mags = stft_complex(&w.samples, &framing)
        .into_iter()
        .map(|c| c.norm())
        .collect();
    LinSpectrogram::new(mags, frames, framing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_zero_magnitudes() {
        let w = Waveform::new(vec![0.0; 1000], 16000).unwrap();
        let s = stft(&w, 400, 200, 512).unwrap();
        assert_eq!(s.frames, 4);
        assert!(s.mags.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn too_short_is_explicit() {
        let w = Waveform::new(vec![0.0; 10], 16000).unwrap();
        assert!(matches!(stft(&w, 400, 200, 512), Err(Error::TooShort { .. })));
    }

    #[test]
    fn bad_framing_rejected() {
        let w = Waveform::new(vec![0.0; 1000], 16000).unwrap();
        assert!(stft(&w, 600, 200, 512).is_err());
        assert!(stft(&w, 400, 0, 512).is_err());
        assert!(stft(&w, 400, 401, 512).is_err());
    }

    #[test]
    fn istft_inverts_consistent_spectra() {
        let framing = Framing {
            frame_len: 64,
            hop: 16,
            n_fft: 128,
            sample_rate: 8000,
        };
        let x: Vec<f64> = (0..64 + 16 * 9).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let frames = framing.frame_count(x.len());
        let y = istft(&stft_complex(&x, &framing), frames, &framing);
        // sample 0 sits under a zero window tap and cannot be recovered.
        for i in 1..x.len() {
            assert!((x[i] - y[i]).abs() < 1e-12, "sample {i}");
        }
    }
}
