//! Conversion: source audio → phoneme posteriors → latent → decoded
//! spectrogram → power emphasis → Griffin-Lim, plus the sweep and diversity
//! experiments built on it.
//!
//! At conversion time there is no target utterance to encode, so the latent
//! is driven directly by a prior draw `eps` (pushed through the flow when the
//! model has one).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::phoneme::{classify_frames, ClassifierModel, PhonemeLabels};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{
    estimate_f0, griffin_lim, power_emphasis, to_mel, write_pgm, write_wav, F0Contour, LinSpectrogram,
    MelSpectrogram, Waveform, DEFAULT_GL_ITERS, DEFAULT_POWER,
};
use crate::synth::{NoiseVector, SynthModel};

pub const DEFAULT_CLAMP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Per-coordinate bound on noise draws; `None` samples the full Gaussian.
    pub clamp_radius: Option<f64>,
    pub num_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clamp_radius: Some(DEFAULT_CLAMP),
            num_samples: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.clamp_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!("clamp radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Draw number `index` from the sampler's noise stream.
pub fn sample_epsilon_indexed(cfg: &SamplerConfig, dim: usize, index: u64) -> Result<NoiseVector> {
    cfg.validate()?;
    if dim == 0 {
        return Err(invalid("noise dimension must be at least 1"));
    }
    let mut rng = SeedTree::new(cfg.seed).rng(Purpose::Eps, index);
    let v = (0..dim)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            match cfg.clamp_radius {
                Some(r) => x.clamp(-r, r),
                None => x,
            }
        })
        .collect();
    Ok(NoiseVector(v))
}

/// Standard-normal draw, clamped per coordinate when configured.
pub fn sample_epsilon(cfg: &SamplerConfig, dim: usize) -> Result<NoiseVector> {
    sample_epsilon_indexed(cfg, dim, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSpec {
    pub eps1: NoiseVector,
    pub eps2: NoiseVector,
    pub alphas: Vec<f64>,
}

impl InterpolationSpec {
    pub fn new(eps1: NoiseVector, eps2: NoiseVector, alphas: Vec<f64>) -> Result<Self> {
        if eps1.len() != eps2.len() {
            return Err(shape_err("interpolation endpoints", eps1.len(), eps2.len()));
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("interpolation weights must lie in [0, 1]"));
        }
        if alphas.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("interpolation weights must be sorted"));
        }
        Ok(Self { eps1, eps2, alphas })
    }

    /// `steps` evenly spaced weights from 0 to 1 inclusive.
    pub fn evenly(eps1: NoiseVector, eps2: NoiseVector, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid("a sweep needs at least two steps"));
        }
        let n = (steps - 1) as f64;
        Self::new(eps1, eps2, (0..steps).map(|i| i as f64 / n).collect())
    }
}

/// `alpha · eps1 + (1 − alpha) · eps2`.
pub fn interpolate(spec: &InterpolationSpec, alpha: f64) -> Result<NoiseVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(NoiseVector(
        spec.eps1
            .0
            .iter()
            .zip(&spec.eps2.0)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect(),
    ))
}

/// Vocoding and output-analysis settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocoderConfig {
    pub power: f64,
    pub gl_iters: usize,
    pub seed: u64,
    /// Pitch search range for the output contour.
    pub f0_min: f64,
    pub f0_max: f64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            power: DEFAULT_POWER,
            gl_iters: DEFAULT_GL_ITERS,
            seed: 0,
            f0_min: 60.0,
            f0_max: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionResult {
    pub waveform: Waveform,
    /// Decoded magnitudes before power emphasis.
    pub spectrogram: LinSpectrogram,
    /// Log-mel of [`Self::spectrogram`].
    pub mel: MelSpectrogram,
    pub eps_used: NoiseVector,
    pub f0_contour: F0Contour,
}

/// Converts `source` into the target voice with the latent driven by `eps`.
/// The baseline ignores `eps`.
pub fn convert(
    source: &Waveform,
    classifier: &ClassifierModel,
    synth: &SynthModel,
    eps: &NoiseVector,
    vocoder: &VocoderConfig,
) -> Result<ConversionResult> {
    if !classifier.is_frozen() {
        return Err(Error::ModelNotReady("classifier is not trained".into()));
    }
    let features = &classifier.features;
    let framing = match synth {
        SynthModel::Cvae(m) => m.framing,
        SynthModel::Baseline(b) => b.framing,
    };
    if framing != features.framing {
        return Err(invalid("synthesizer and classifier use different framings"));
    }
    let c = classify_frames(classifier, &features.analyze(source)?)?;
    let spectrogram = match synth {
        SynthModel::Cvae(m) => m.decode(&m.latent_from_noise(eps)?, &c)?,
        SynthModel::Baseline(b) => b.synthesize(&c)?,
    };
    let emphasized = power_emphasis(&spectrogram, vocoder.power)?;
    let waveform = griffin_lim(&emphasized, vocoder.gl_iters, vocoder.seed)?;
    let mel = to_mel(&spectrogram, &features.filterbank()?)?;
    let f0_contour = estimate_f0(&waveform, framing.frame_len, framing.hop, vocoder.f0_min, vocoder.f0_max)?;
    Ok(ConversionResult {
        waveform,
        spectrogram,
        mel,
        eps_used: eps.clone(),
        f0_contour,
    })
}

/// Fraction of frames where the classifier's reading of the converted audio
/// matches `labels` (the source's frame labels).
pub fn linguistic_agreement(classifier: &ClassifierModel, result: &ConversionResult, labels: &PhonemeLabels) -> Result<f64> {
    let predicted = classifier.classify_waveform(&result.waveform)?.argmax();
    if predicted.len() != labels.len() {
        return Err(shape_err("linguistic agreement", labels.len(), predicted.len()));
    }
    let hits = predicted
        .iter()
        .zip(&labels.indices)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mel image with low frequencies at the bottom.
pub fn write_mel_pgm(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let (rows, cols) = (mel.n_mels, mel.frames);
    let mut img = vec![0.0; rows * cols];
    for t in 0..cols {
        for m in 0..rows {
            img[(rows - 1 - m) * cols + t] = mel.mels[t * rows + m];
        }
    }
    write_pgm(path, &img, rows, cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub alphas: Vec<f64>,
    pub results: Vec<ConversionResult>,
    /// Mel distance between consecutive steps; one fewer than `alphas`.
    pub adjacent: Vec<f64>,
}

impl Sweep {
    pub fn max_adjacent(&self) -> f64 {
        self.adjacent.iter().copied().fold(0.0, f64::max)
    }

    pub fn median_adjacent(&self) -> f64 {
        median(&self.adjacent)
    }

    pub fn endpoint_distance(&self) -> Result<f64> {
        match (self.results.first(), self.results.last()) {
            (Some(a), Some(b)) => a.mel.distance(&b.mel),
            _ => Ok(0.0),
        }
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("alpha,mel_l2\n");
        for (i, d) in self.adjacent.iter().enumerate() {
            let _ = writeln!(s, "{:.4},{d:?}", self.alphas[i + 1]);
        }
        s
    }

    /// `<stem>_a<alpha>.wav` and `.pgm` per step plus `<stem>_sweep.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for (a, r) in self.alphas.iter().zip(&self.results) {
            let wav = dir.join(format!("{stem}_a{a:.4}.wav"));
            write_wav(&wav, &r.waveform)?;
            let pgm = dir.join(format!("{stem}_a{a:.4}.pgm"));
            write_mel_pgm(&pgm, &r.mel)?;
            out.push(wav);
            out.push(pgm);
        }
        let csv = dir.join(format!("{stem}_sweep.csv"));
        std::fs::write(&csv, self.csv())?;
        out.push(csv);
        Ok(out)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// One conversion per interpolation weight, in weight order.
pub fn interpolation_sweep(
    source: &Waveform,
    classifier: &ClassifierModel,
    synth: &SynthModel,
    spec: &InterpolationSpec,
    vocoder: &VocoderConfig,
) -> Result<Sweep> {
    if spec.alphas.len() < 2 {
        return Err(invalid("a sweep needs at least two steps"));
    }
    let results: Vec<ConversionResult> = spec
        .alphas
        .par_iter()
        .map(|&a| convert(source, classifier, synth, &interpolate(spec, a)?, vocoder))
        .collect::<Result<_>>()?;
    let adjacent = results
        .windows(2)
        .map(|w| w[0].mel.distance(&w[1].mel))
        .collect::<Result<_>>()?;
    Ok(Sweep {
        alphas: spec.alphas.clone(),
        results,
        adjacent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub results: Vec<ConversionResult>,
    /// Mel distances of every pair `(i, j)`, `i < j`, in row order.
    pub pairwise: Vec<f64>,
    pub mean_pairwise_mel: f64,
    /// Spread of the output pitch across samples, per frame; `None` where
    /// fewer than two samples are voiced.
    pub f0_std: Vec<Option<f64>>,
    pub mean_f0_std: f64,
}

impl DiversityReport {
    pub fn summary(&self) -> String {
        format!(
            "samples = {}\nmean_pairwise_mel = {:?}\nmean_f0_std = {:?}\n",
            self.results.len(),
            self.mean_pairwise_mel,
            self.mean_f0_std
        )
    }

    /// `<stem>_s<i>.wav` per sample plus `<stem>_diversity.txt`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for (i, r) in self.results.iter().enumerate() {
            let wav = dir.join(format!("{stem}_s{i}.wav"));
            write_wav(&wav, &r.waveform)?;
            out.push(wav);
        }
        let txt = dir.join(format!("{stem}_diversity.txt"));
        std::fs::write(&txt, self.summary())?;
        out.push(txt);
        Ok(out)
    }
}

/// Standard deviation computed from pairwise differences, so identical
/// values give exactly zero.
pub fn spread(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mut acc = 0.0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let d = values[i] - values[j];
            acc += d * d;
        }
    }
    (acc / (n * n)).sqrt()
}

/// Converts `source` once per noise draw and measures how much the outputs differ.
pub fn diversity_report(
    source: &Waveform,
    classifier: &ClassifierModel,
    synth: &SynthModel,
    sampler: &SamplerConfig,
    vocoder: &VocoderConfig,
) -> Result<DiversityReport> {
    if sampler.num_samples < 2 {
        return Err(invalid("diversity needs at least two samples"));
    }
    let dim = match synth {
        SynthModel::Cvae(m) => m.spec.latent_dim,
        SynthModel::Baseline(_) => 1,
    };
    let results: Vec<ConversionResult> = (0..sampler.num_samples)
        .into_par_iter()
        .map(|i| {
            let eps = sample_epsilon_indexed(sampler, dim, i as u64)?;
            convert(source, classifier, synth, &eps, vocoder)
        })
        .collect::<Result<_>>()?;
    let mut pairwise = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            pairwise.push(results[i].mel.distance(&results[j].mel)?);
        }
    }
    let mean_pairwise_mel = pairwise.iter().sum::<f64>() / pairwise.len() as f64;
    let frames = results[0].f0_contour.len();
    let f0_std: Vec<Option<f64>> = (0..frames)
        .map(|t| {
            let v: Vec<f64> = results.iter().filter_map(|r| r.f0_contour[t]).collect();
            (v.len() >= 2).then(|| spread(&v))
        })
        .collect();
    let defined: Vec<f64> = f0_std.iter().flatten().copied().collect();
    let mean_f0_std = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(DiversityReport {
        results,
        pairwise,
        mean_pairwise_mel,
        f0_std,
        mean_f0_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_seeded_and_clamped() {
        let cfg = SamplerConfig {
            seed: 5,
            clamp_radius: Some(0.5),
            num_samples: 1,
        };
        let a = sample_epsilon(&cfg, 16).unwrap();
        assert_eq!(a, sample_epsilon(&cfg, 16).unwrap());
        assert!(a.max_abs() <= 0.5);
        assert_ne!(a, sample_epsilon_indexed(&cfg, 16, 1).unwrap());
        let bad = SamplerConfig {
            clamp_radius: Some(0.0),
            ..cfg
        };
        assert!(sample_epsilon(&bad, 4).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let spec = InterpolationSpec::evenly(NoiseVector(vec![2.0, 0.0]), NoiseVector(vec![0.0, 2.0]), 3).unwrap();
        assert_eq!(spec.alphas, vec![0.0, 0.5, 1.0]);
        assert_eq!(interpolate(&spec, 1.0).unwrap(), spec.eps1);
        assert_eq!(interpolate(&spec, 0.0).unwrap(), spec.eps2);
        assert_eq!(interpolate(&spec, 0.5).unwrap().0, vec![1.0, 1.0]);
        assert!(interpolate(&spec, 1.5).is_err());
        assert!(InterpolationSpec::new(spec.eps1.clone(), spec.eps2.clone(), vec![0.5, 0.2]).is_err());
    }

    #[test]
    fn spread_of_identical_values_is_zero() {
        assert_eq!(spread(&[180.25; 7]), 0.0);
        // population std of {1, 3} is 1
        assert!((spread(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
