//! DSP kernels against brute-force oracles.

mod common;

use std::f64::consts::PI;

use common::rng;
use cvae_vc::harness::{generate_corpus, CorpusConfig};
use cvae_vc::signal::{
    estimate_f0, griffin_lim, griffin_lim_traced, hann, hz_to_mel, mel_filterbank, power_emphasis, read_wav, stft,
    to_mel, to_mel_linear, wav_bytes, write_wav, Framing, LinSpectrogram, Waveform,
};
use proptest::prelude::*;
use rand::Rng;

fn sine(freq: f64, len: usize, sr: u32, amp: f64) -> Waveform {
    Waveform::new(
        (0..len).map(|n| amp * (2.0 * PI * freq * n as f64 / sr as f64).sin()).collect(),
        sr,
    )
    .unwrap()
}

fn random_wave(seed: u64, len: usize) -> Waveform {
    let mut r = rng(seed);
    Waveform::new((0..len).map(|_| r.random_range(-1.0..1.0)).collect(), 16000).unwrap()
}

/// `|Σ_n x[n] w[n] e^{-2πikn/N}|` evaluated term by term.
fn naive_dft_frame(x: &[f64], n_fft: usize) -> Vec<f64> {
    let w = hann(x.len());
    (0..n_fft / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, (&s, &wn)) in x.iter().zip(&w).enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += s * wn * a.cos();
                im += s * wn * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn assert_stft_matches_dft(w: &Waveform, frame_len: usize, hop: usize, n_fft: usize) {
    let s = stft(w, frame_len, hop, n_fft).unwrap();
    assert_eq!(s.frames, (w.len() - frame_len) / hop + 1);
    for t in 0..s.frames {
        let oracle = naive_dft_frame(&w.samples[t * hop..t * hop + frame_len], n_fft);
        for (a, b) in s.frame(t).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "frame {t}: {a} vs {b}");
        }
    }
}

#[test]
fn stft_matches_naive_dft_on_2048_random_samples() {
    assert_stft_matches_dft(&random_wave(3, 2048), 400, 200, 512);
}

#[test]
fn stft_frame_count_and_errors() {
    let s = stft(&Waveform::new(vec![0.0; 1000], 16000).unwrap(), 400, 200, 512).unwrap();
    assert_eq!(s.frames, 4);
    assert!(s.mags.iter().all(|&v| v == 0.0));
    assert!(stft(&Waveform::new(vec![0.0; 399], 16000).unwrap(), 400, 200, 512).is_err());
}

#[test]
fn mel_scale_and_filterbank_shape() {
    assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    let fb = mel_filterbank(16000, 512, 40, 0.0, 8000.0).unwrap();
    assert_eq!((fb.n_mels, fb.bins), (40, 257));
    assert!(fb.weights.iter().all(|&w| w >= 0.0));
    for m in 0..40 {
        assert!(fb.row(m).iter().any(|&w| w > 0.0), "row {m} is empty");
    }
    let peak = |m: usize| {
        let r = fb.row(m);
        (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b })
    };
    assert!((1..40).all(|m| peak(m) > peak(m - 1)));
    assert!(mel_filterbank(16000, 512, 40, 100.0, 9000.0).is_err());
    assert!(mel_filterbank(16000, 512, 40, 500.0, 400.0).is_err());
}

#[test]
fn to_mel_matches_scalar_loop() {
    let framing = Framing {
        frame_len: 512,
        hop: 128,
        n_fft: 512,
        sample_rate: 16000,
    };
    let fb = mel_filterbank(16000, 512, 40, 0.0, 8000.0).unwrap();
    let mut r = rng(11);
    let frames = 6;
    let mags: Vec<f64> = (0..frames * 257).map(|_| r.random_range(0.0..3.0)).collect();
    let s = LinSpectrogram::new(mags.clone(), frames, framing).unwrap();
    let mel = to_mel(&s, &fb).unwrap();
    for t in 0..frames {
        for m in 0..40 {
            let mut acc = 0.0;
            for b in (0..257).rev() {
                acc += fb.weights[m * 257 + b] * mags[t * 257 + b];
            }
            let want = (acc + 1e-6).ln();
            assert!((mel.mels[t * 40 + m] - want).abs() < 1e-9);
        }
    }
    let zero = LinSpectrogram::new(vec![0.0; 257], 1, framing).unwrap();
    assert!(to_mel(&zero, &fb).unwrap().mels.iter().all(|&v| v == 1e-6f64.ln()));
    // unit vector picks out one column of the weights
    let mut one = vec![0.0; 257];
    one[40] = 2.5;
    let m = to_mel(&LinSpectrogram::new(one, 1, framing).unwrap(), &fb).unwrap();
    for k in 0..40 {
        assert!((m.mels[k] - (2.5 * fb.weights[k * 257 + 40] + 1e-6).ln()).abs() < 1e-12);
    }
    // flat spectrum: every channel receives energy
    let flat = LinSpectrogram::new(vec![1.0; 257], 1, framing).unwrap();
    assert!(to_mel_linear(&flat, &fb).unwrap().iter().all(|&v| v > 0.0));
}

#[test]
fn power_emphasis_cases() {
    let f = Framing {
        frame_len: 4,
        hop: 2,
        n_fft: 4,
        sample_rate: 16000,
    };
    let s = LinSpectrogram::new(vec![0.0, 1.0, 2.0, 0.5, 1.0, 0.0], 2, f).unwrap();
    assert_eq!(power_emphasis(&s, 1.0).unwrap(), s);
    let e = power_emphasis(&s, 1.2).unwrap();
    assert_eq!((e.mags[0], e.mags[1]), (0.0, 1.0));
    assert!((e.mags[2] - 2f64.powf(1.2)).abs() < 1e-15);
    assert!(power_emphasis(&s, 0.0).is_err());
}

#[test]
fn griffin_lim_recovers_a_sine() {
    let framing = Framing::default();
    let w = sine(440.0, 16000, 16000, 0.5);
    let s = stft(&w, framing.frame_len, framing.hop, framing.n_fft).unwrap();
    let trace = griffin_lim_traced(&s, 60, 0).unwrap();
    // plain Griffin-Lim from random phase plateaus near 0.1 after 60 iterations
    let rel = trace.relative_error(&s);
    assert!(rel < 0.2, "relative spectral error {rel}");
    assert!(rel < 0.3 * trace.errors[0] / s.norm());
    for k in 1..trace.errors.len() {
        assert!(trace.errors[k] <= trace.errors[k - 1] + 1e-9);
    }
}

#[test]
fn griffin_lim_error_is_non_increasing_on_consistent_targets() {
    let framing = Framing {
        frame_len: 256,
        hop: 64,
        n_fft: 256,
        sample_rate: 16000,
    };
    for seed in 0..5 {
        let w = random_wave(100 + seed, 4096);
        let s = stft(&w, framing.frame_len, framing.hop, framing.n_fft).unwrap();
        let trace = griffin_lim_traced(&s, 40, seed).unwrap();
        for k in 1..trace.errors.len() {
            assert!(
                trace.errors[k] <= trace.errors[k - 1] + 1e-9,
                "seed {seed} iteration {k}: {} > {}",
                trace.errors[k],
                trace.errors[k - 1]
            );
        }
    }
}

#[test]
fn griffin_lim_silence_and_determinism() {
    let f = Framing::default();
    let zero = LinSpectrogram::new(vec![0.0; 3 * f.bins()], 3, f).unwrap();
    assert!(griffin_lim(&zero, 5, 1).unwrap().samples.iter().all(|&v| v == 0.0));
    let s = stft(&random_wave(5, 3000), f.frame_len, f.hop, f.n_fft).unwrap();
    let a = griffin_lim(&s, 5, 9).unwrap();
    assert_eq!(a, griffin_lim(&s, 5, 9).unwrap());
    assert!(a.peak() <= 1.0);
}

#[test]
fn f0_of_known_tone_and_silence() {
    let w = sine(220.0, 8000, 16000, 0.8);
    let f0 = estimate_f0(&w, 800, 200, 60.0, 400.0).unwrap();
    let voiced: Vec<f64> = f0.iter().flatten().copied().collect();
    assert!(!voiced.is_empty());
    assert!(voiced.iter().all(|f| (f - 220.0).abs() < 2.0), "{voiced:?}");
    let silent = estimate_f0(&Waveform::new(vec![0.0; 8000], 16000).unwrap(), 800, 200, 60.0, 400.0).unwrap();
    assert!(silent.iter().all(Option::is_none));
}

#[test]
fn f0_tracks_generated_contours() {
    let corpus = generate_corpus(
        2,
        &CorpusConfig {
            utterances: 12,
            speakers: 3,
            ..CorpusConfig::default()
        },
    )
    .unwrap();
    let f = corpus.framing;
    let mut errors = Vec::new();
    for u in &corpus.utterances {
        let est = estimate_f0(&u.waveform, f.frame_len, f.hop, 60.0, 400.0).unwrap();
        for (e, t) in est.iter().zip(u.f0.as_ref().unwrap()) {
            if let (Some(e), Some(t)) = (e, t) {
                errors.push((e - t).abs() / t);
            }
        }
    }
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    assert!(errors.len() > 100);
    assert!(median < 0.05, "median relative error {median}");
}

#[test]
fn wav_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let w = sine(300.0, 1000, 16000, 0.7);
    write_wav(&p, &w).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.sample_rate, 16000);
    assert!(w.samples.iter().zip(&back.samples).all(|(a, b)| (a - b).abs() <= 1.0 / 32767.0));
    assert_eq!(wav_bytes(&back).unwrap(), std::fs::read(&p).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_matches_dft_for_any_framing(
        seed in 0u64..1000,
        frame_pow in 4usize..9,
        hop_div in 1usize..4,
        extra_fft in 0usize..2,
        frames in 1usize..8,
    ) {
        let frame_len = 1 << frame_pow;
        let hop = (frame_len / hop_div).max(1);
        let n_fft = frame_len << extra_fft;
        prop_assume!(n_fft <= 512);
        let len = frame_len + (frames - 1) * hop;
        assert_stft_matches_dft(&random_wave(seed, len), frame_len, hop, n_fft);
    }

    #[test]
    fn mel_projection_is_linear(seed in 0u64..1000, a in 0.0f64..10.0) {
        let f = Framing { frame_len: 64, hop: 32, n_fft: 64, sample_rate: 16000 };
        let fb = mel_filterbank(16000, 64, 8, 0.0, 8000.0).unwrap();
        let mut r = rng(seed);
        let mags: Vec<f64> = (0..3 * 33).map(|_| r.random_range(0.0..2.0)).collect();
        let s = LinSpectrogram::new(mags.clone(), 3, f).unwrap();
        let sa = LinSpectrogram::new(mags.iter().map(|v| a * v).collect(), 3, f).unwrap();
        let (l, la) = (to_mel_linear(&s, &fb).unwrap(), to_mel_linear(&sa, &fb).unwrap());
        for (x, y) in l.iter().zip(&la) {
            prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn power_emphasis_composes(seed in 0u64..1000, a in 0.2f64..3.0, b in 0.2f64..3.0) {
        let f = Framing { frame_len: 8, hop: 4, n_fft: 8, sample_rate: 16000 };
        let mut r = rng(seed);
        let s = LinSpectrogram::new((0..10).map(|_| r.random_range(0.0..2.0)).collect(), 2, f).unwrap();
        let two = power_emphasis(&power_emphasis(&s, a).unwrap(), b).unwrap();
        let one = power_emphasis(&s, a * b).unwrap();
        for (x, y) in two.mags.iter().zip(&one.mags) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

