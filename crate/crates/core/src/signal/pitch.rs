use super::{Framing, Waveform};
use crate::error::{invalid, Result};

/// Per-frame fundamental frequency; `None` marks an unvoiced frame.
pub type F0Contour = Vec<Option<f64>>;

/// Normalised autocorrelation peak below which a frame is called unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;

/// Autocorrelation pitch tracker.
///
/// Each frame is mean-removed; the biased autocorrelation `r(τ)/r(0)` is
/// searched over lags `[sr/fmax, sr/fmin]` and the best peak is refined with
/// a parabola through its neighbours.
pub fn estimate_f0(w: &Waveform, frame_len: usize, hop: usize, fmin: f64, fmax: f64) -> Result<F0Contour> {
    let sr = w.sample_rate as f64;
    if !(0.0 < fmin && fmin < fmax && fmax < sr / 2.0) {
        return Err(invalid(format!(
            "pitch range must satisfy 0 < fmin < fmax < {}",
            sr / 2.0
        )));
    }
    if frame_len == 0 || hop == 0 {
        return Err(invalid("frame_len and hop must be positive"));
    }
    let framing = Framing {
        frame_len,
        hop,
        n_fft: frame_len,
        sample_rate: w.sample_rate,
    };
    let min_lag = ((sr / fmax).floor() as usize).max(1);
    let max_lag = ((sr / fmin).ceil() as usize).min(frame_len.saturating_sub(2));
    let frames = framing.frame_count(w.len());
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![0.0; frame_len];
    for t in 0..frames {
        let seg = &w.samples[t * hop..t * hop + frame_len];
        let mean = seg.iter().sum::<f64>() / frame_len as f64;
        buf.iter_mut().zip(seg).for_each(|(b, s)| *b = s - mean);
        out.push(frame_f0(&buf, sr, min_lag, max_lag));
    }
    Ok(out)
}

fn autocorr(x: &[f64], lag: usize) -> f64 {
    x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum()
}

fn frame_f0(x: &[f64], sr: f64, min_lag: usize, max_lag: usize) -> Option<f64> {
    if min_lag + 1 >= max_lag {
        return None;
    }
    let r0 = autocorr(x, 0);
    if r0 <= 1e-10 {
        return None;
    }
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(|l| autocorr(x, l) / r0).collect();
    // r[i] is lag min_lag - 1 + i; only interior local maxima qualify
    let mut best: Option<usize> = None;
    for i in 1..r.len() - 1 {
        if r[i] >= r[i - 1] && r[i] > r[i + 1] && best.is_none_or(|b| r[i] > r[b]) {
            best = Some(i);
        }
    }
    let i = best?;
    if r[i] < VOICING_THRESHOLD {
        return None;
    }
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    let lag = (min_lag - 1 + i) as f64 + shift.clamp(-0.5, 0.5);
    Some(sr / lag)
}
