use super::{LinSpectrogram, MelSpectrogram, LOG_MEL_FLOOR};
use crate::error::{invalid, shape_err, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale, `n_mels × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub bins: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }
}

pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(invalid(format!(
            "mel range must satisfy 0 <= fmin < fmax <= {nyquist}, got [{fmin}, {fmax}]"
        )));
    }
    if n_mels == 0 || n_fft < 2 {
        return Err(invalid("n_mels and n_fft must be positive"));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * bins..(m + 1) * bins];
        for (b, w) in row.iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            *w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            // narrower than one bin: take the nearest bin to the centre
            let b = ((c / bin_hz).round() as usize).min(bins - 1);
            row[b] = 1.0;
        }
    }
    let fb = MelFilterbank {
        weights,
        n_mels,
        bins,
        fmin,
        fmax,
    };
    let peaks: Vec<usize> = (0..n_mels)
        .map(|m| {
            let row = fb.row(m);
            (0..bins).fold(0, |best, b| if row[b] > row[best] { b } else { best })
        })
        .collect();
    if peaks.windows(2).any(|p| p[1] <= p[0]) {
        return Err(invalid(format!(
            "{n_mels} mel bands are too dense for n_fft {n_fft}"
        )));
    }
    Ok(fb)
}

/// `mags · weightsᵀ` without the log.
pub fn to_mel_linear(s: &LinSpectrogram, fb: &MelFilterbank) -> Result<Vec<f64>> {
    if fb.bins != s.bins() {
        return Err(shape_err("to_mel", format!("{} bins", fb.bins), s.bins()));
    }
    let mut out = vec![0.0; s.frames * fb.n_mels];
    for t in 0..s.frames {
        let frame = s.frame(t);
        for m in 0..fb.n_mels {
            out[t * fb.n_mels + m] = frame.iter().zip(fb.row(m)).map(|(a, w)| a * w).sum();
        }
    }
    Ok(out)
}

/// Log-mel projection: `log(mags · weightsᵀ + 1e-6)`.
pub fn to_mel(s: &LinSpectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    let lin = to_mel_linear(s, fb)?;
    Ok(MelSpectrogram {
        mels: lin.into_iter().map(|v| (v + LOG_MEL_FLOOR).ln()).collect(),
        frames: s.frames,
        n_mels: fb.n_mels,
        framing: s.framing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Framing;

    #[test]
    fn mel_of_1000_hz_is_about_1000() {
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn shape_and_nonnegativity() {
        let fb = mel_filterbank(16000, 512, 40, 0.0, 8000.0).unwrap();
        assert_eq!((fb.n_mels, fb.bins), (40, 257));
        assert_eq!(fb.weights.len(), 40 * 257);
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for m in 0..40 {
            assert!(fb.row(m).iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn invalid_range_rejected() {
        assert!(mel_filterbank(16000, 512, 40, 100.0, 100.0).is_err());
        assert!(mel_filterbank(16000, 512, 40, 0.0, 9000.0).is_err());
        assert!(mel_filterbank(16000, 512, 40, -1.0, 8000.0).is_err());
    }

    #[test]
    fn zero_spectrogram_hits_the_floor() {
        let framing = Framing::default();
        let fb = mel_filterbank(16000, framing.n_fft, 40, 0.0, 8000.0).unwrap();
        let s = LinSpectrogram::new(vec![0.0; 3 * framing.bins()], 3, framing).unwrap();
        let m = to_mel(&s, &fb).unwrap();
        assert!(m.mels.iter().all(|&v| v == (1e-6f64).ln()));
    }

    #[test]
    fn unit_bin_selects_filter_column() {
        let framing = Framing::default();
        let fb = mel_filterbank(16000, framing.n_fft, 40, 0.0, 8000.0).unwrap();
        let mut mags = vec![0.0; framing.bins()];
        mags[37] = 2.5;
        let s = LinSpectrogram::new(mags, 1, framing).unwrap();
        let m = to_mel(&s, &fb).unwrap();
        for k in 0..40 {
            assert_eq!(m.mels[k], (2.5 * fb.row(k)[37] + 1e-6).ln());
        }
    }

    #[test]
    fn bin_mismatch_is_error() {
        let fb = mel_filterbank(16000, 512, 40, 0.0, 8000.0).unwrap();
        let s = LinSpectrogram::new(vec![0.0; 513], 1, Framing::default()).unwrap();
        assert!(to_mel(&s, &fb).is_err());
    }
}
