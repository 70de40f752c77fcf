//! DSP kernels: framing, STFT, mel projection, power emphasis, Griffin-Lim
//! phase recovery and autocorrelation pitch tracking.
//!
//! All functions are pure. Analysis uses a periodic Hann window with no
//! centering or padding, so a waveform of `n` samples yields
//! `(n - frame_len) / hop + 1` frames.

mod griffin_lim;
mod io;
mod mel;
mod pitch;
mod stft;

pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLimTrace};
pub use io::{read_wav, write_pgm, write_wav, wav_bytes};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, to_mel, to_mel_linear, MelFilterbank};
pub use pitch::{estimate_f0, F0Contour};
pub(crate) use stft::{istft, stft_complex};
pub use stft::{hann, stft};

use crate::error::{invalid, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// 50 ms at 16 kHz.
pub const DEFAULT_FRAME_LEN: usize = 800;
/// 12.5 ms at 16 kHz.
pub const DEFAULT_HOP: usize = 200;
pub const DEFAULT_N_FFT: usize = 1024;
pub const DEFAULT_N_MELS: usize = 40;
pub const DEFAULT_GL_ITERS: usize = 60;
pub const DEFAULT_POWER: f64 = 1.2;
/// Added before the log in [`to_mel`].
pub const LOG_MEL_FLOOR: f64 = 1e-6;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("waveform contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales so the largest magnitude is `target` (silence stays silent).
    pub fn peak_normalized(mut self, target: f64) -> Self {
        let p = self.peak();
        if p > 0.0 {
            let g = target / p;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
        self
    }
}

/// Framing parameters shared by the spectrogram types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_HOP,
            n_fft: DEFAULT_N_FFT,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl Framing {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced from `len` samples (zero when too short).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Samples covered by `frames` analysis frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_len > self.n_fft {
            return Err(invalid(format!(
                "frame_len {} must be in 1..={}",
                self.frame_len, self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(invalid(format!("hop {} must be in 1..={}", self.hop, self.frame_len)));
        }
        if self.sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(())
    }
}

/// Linear magnitude spectrogram, `frames × bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinSpectrogram {
    pub mags: Vec<f64>,
    pub frames: usize,
    pub framing: Framing,
}

impl LinSpectrogram {
    pub fn new(mags: Vec<f64>, frames: usize, framing: Framing) -> Result<Self> {
        let bins = framing.bins();
        if mags.len() != frames * bins {
            return Err(invalid(format!(
                "{} values do not form {frames}x{bins}",
                mags.len()
            )));
        }
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(invalid("magnitudes must be finite and non-negative"));
        }
        Ok(Self {
            mags,
            frames,
            framing,
        })
    }

    pub fn bins(&self) -> usize {
        self.framing.bins()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let b = self.bins();
        &self.mags[t * b..(t + 1) * b]
    }

    pub fn norm(&self) -> f64 {
        self.mags.iter().map(|m| m * m).sum::<f64>().sqrt()
    }
}

/// Log-mel spectrogram, `frames × n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub mels: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
    pub framing: Framing,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.mels[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Frobenius distance; frame counts must match.
    pub fn distance(&self, other: &MelSpectrogram) -> Result<f64> {
        if self.frames != other.frames || self.n_mels != other.n_mels {
            return Err(invalid("mel spectrograms differ in shape"));
        }
        Ok(self
            .mels
            .iter()
            .zip(&other.mels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Raises every magnitude to `p`.
pub fn power_emphasis(s: &LinSpectrogram, p: f64) -> Result<LinSpectrogram> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(invalid(format!("exponent must be positive, got {p}")));
    }
    if s.mags.iter().any(|m| *m < 0.0) {
        return Err(invalid("power emphasis applies to magnitudes only"));
    }
    Ok(LinSpectrogram {
        mags: s.mags.iter().map(|m| m.powf(p)).collect(),
        frames: s.frames,
        framing: s.framing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mags: Vec<f64>) -> LinSpectrogram {
        let framing = Framing {
            frame_len: 4,
            hop: 2,
            n_fft: 4,
            sample_rate: 8,
        };
        let frames = mags.len() / 3;
        LinSpectrogram::new(mags, frames, framing).unwrap()
    }

    #[test]
    fn default_power_is_1_2() {
        assert_eq!(DEFAULT_POWER, 1.2);
    }

    #[test]
    fn unit_power_is_identity() {
        let s = spec(vec![0.3, 2.0, 7.5, 0.0, 1.0, 4.2]);
        assert_eq!(power_emphasis(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn zero_and_one_are_fixed_points() {
        let s = spec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        for p in [0.3, 1.2, 3.0] {
            assert_eq!(power_emphasis(&s, p).unwrap().mags, s.mags);
        }
    }

    #[test]
    fn negative_magnitudes_rejected() {
        let mut s = spec(vec![0.0; 3]);
        s.mags[1] = -1.0;
        assert!(power_emphasis(&s, 1.2).is_err());
        assert!(power_emphasis(&spec(vec![0.0; 3]), 0.0).is_err());
    }

    #[test]
    fn framing_arithmetic() {
        let f = Framing {
            frame_len: 400,
            hop: 200,
            n_fft: 512,
            sample_rate: 16000,
        };
        assert_eq!(f.frame_count(1000), 4);
        assert_eq!(f.span(4), 1000);
        assert_eq!(f.frame_count(399), 0);
    }
}
