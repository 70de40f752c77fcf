//! Frame-level phoneme classifier.
//!
//! Log-mel frames pass through two dense layers and a unidirectional GRU, so
//! the posterior at frame `t` depends on the current frame and the recurrent
//! state carried from `t − 1`. The softmax output rows are the linguistic
//! condition consumed by the synthesizer.

mod metrics;
mod train;

pub use metrics::{confusion_matrix, top1_accuracy, ConfusionMatrix};
pub use train::{train_classifier, ClassifierConfig, EpochMetrics, LabeledFrames, TrainingReport};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::neural::{
    forward, init_stack, Activation, Dense, Gru, LayerSpec, NetworkParams, Real, Tensor,
};
use crate::signal::{mel_filterbank, stft, to_mel, Framing, LinSpectrogram, MelFilterbank, MelSpectrogram, Waveform};

/// Ordered, duplicate-free phoneme symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
}

impl PhonemeInventory {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(invalid("an inventory needs at least two phonemes"));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(invalid(format!("invalid phoneme symbol `{s}`")));
            }
            if symbols[..i].contains(s) {
                return Err(invalid(format!("duplicate phoneme `{s}`")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, s: &str) -> Option<usize> {
        self.symbols.iter().position(|x| x == s)
    }
}

impl fmt::Display for PhonemeInventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbols.join(" "))
    }
}

impl FromStr for PhonemeInventory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split_whitespace())
    }
}

/// Per-frame target indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeLabels {
    pub indices: Vec<usize>,
}

impl PhonemeLabels {
    pub fn new(indices: Vec<usize>, inventory: &PhonemeInventory) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= inventory.len()) {
            return Err(invalid(format!("label index {bad} outside inventory of {}", inventory.len())));
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Phoneme posterior rows, `frames × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticFeatures {
    pub probs: Vec<f64>,
    pub frames: usize,
    pub classes: usize,
}

impl LinguisticFeatures {
    pub fn new(probs: Vec<f64>, frames: usize, classes: usize) -> Result<Self> {
        if probs.len() != frames * classes || classes == 0 {
            return Err(invalid("posterior matrix has the wrong size"));
        }
        for t in 0..frames {
            let row = &probs[t * classes..(t + 1) * classes];
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("row {t} is not on the simplex (sum {s})")));
            }
        }
        Ok(Self {
            probs,
            frames,
            classes,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn argmax(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| {
                let r = self.row(t);
                (0..self.classes).fold(0, |b, i| if r[i] > r[b] { i } else { b })
            })
            .collect()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::matrix(self.frames, self.classes, self.probs.iter().map(|&p| T::of(p)).collect())
    }
}

/// How log-mel frames are normalised before entering the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureNorm {
    None,
    /// Subtract the utterance-wide mean and divide by the utterance-wide standard deviation.
    Utterance,
}

impl fmt::Display for FeatureNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureNorm::None => "none",
            FeatureNorm::Utterance => "utterance",
        })
    }
}

impl FromStr for FeatureNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeatureNorm::None),
            "utterance" => Ok(FeatureNorm::Utterance),
            _ => Err(invalid(format!("unknown feature normalisation `{s}`"))),
        }
    }
}

/// Acoustic front end of the classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub framing: Framing,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub norm: FeatureNorm,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let framing = Framing::default();
        Self {
            framing,
            n_mels: crate::signal::DEFAULT_N_MELS,
            fmin: 0.0,
            fmax: framing.sample_rate as f64 / 2.0,
            norm: FeatureNorm::Utterance,
        }
    }
}

impl FeatureConfig {
    pub fn filterbank(&self) -> Result<MelFilterbank> {
        mel_filterbank(self.framing.sample_rate, self.framing.n_fft, self.n_mels, self.fmin, self.fmax)
    }

    pub fn spectrogram(&self, w: &Waveform) -> Result<LinSpectrogram> {
        if w.sample_rate != self.framing.sample_rate {
            return Err(invalid(format!(
                "expected {} Hz audio, got {} Hz",
                self.framing.sample_rate, w.sample_rate
            )));
        }
        stft(w, self.framing.frame_len, self.framing.hop, self.framing.n_fft)
    }

    pub fn mel_of(&self, s: &LinSpectrogram) -> Result<MelSpectrogram> {
        to_mel(s, &self.filterbank()?)
    }

    /// Waveform to log-mel frames.
    pub fn analyze(&self, w: &Waveform) -> Result<MelSpectrogram> {
        self.mel_of(&self.spectrogram(w)?)
    }

    /// Normalised network input, `frames × n_mels`.
    pub fn model_input<T: Real>(&self, m: &MelSpectrogram) -> Tensor<T> {
        let (mean, scale) = match self.norm {
            FeatureNorm::None => (0.0, 1.0),
            FeatureNorm::Utterance => {
                let n = m.mels.len() as f64;
                let mean = m.mels.iter().sum::<f64>() / n;
                let var = m.mels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, 1.0 / var.sqrt().max(1e-6))
            }
        };
        Tensor::matrix(
            m.frames,
            m.n_mels,
            m.mels.iter().map(|&v| T::of((v - mean) * scale)).collect(),
        )
    }
}

/// The classifier network with its inventory and front end.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T: Real = f32> {
    pub params: NetworkParams<T>,
    pub stack: Vec<LayerSpec>,
    pub inventory: PhonemeInventory,
    pub features: FeatureConfig,
    frozen: bool,
}

/// `dense(n_mels→h, relu) → dense(h→h, relu) → gru(h) → dense(h→K) → softmax`.
pub fn classifier_stack(n_mels: usize, hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense(Dense::new("pc.fc1", n_mels, hidden, Activation::Relu)),
        LayerSpec::Dense(Dense::new("pc.fc2", hidden, hidden, Activation::Relu)),
        LayerSpec::Gru(Gru::new("pc.rnn", hidden, hidden)),
        LayerSpec::Dense(Dense::new("pc.out", hidden, classes, Activation::Linear)),
        LayerSpec::Softmax,
    ]
}

impl<T: Real> ClassifierModel<T> {
    /// Freshly initialised (unfrozen) model.
    pub fn new<R: Rng>(inventory: PhonemeInventory, features: FeatureConfig, hidden: usize, rng: &mut R) -> Self {
        let stack = classifier_stack(features.n_mels, hidden, inventory.len());
        let params = init_stack(&stack, rng);
        Self {
            params,
            stack,
            inventory,
            features,
            frozen: false,
        }
    }

    /// Assembles a model from parts; checks that the head width matches the inventory.
    pub fn from_parts(
        params: NetworkParams<T>,
        stack: Vec<LayerSpec>,
        inventory: PhonemeInventory,
        features: FeatureConfig,
        frozen: bool,
    ) -> Result<Self> {
        let width = stack.iter().fold(features.n_mels, |w, l| l.output_width(w));
        if width != inventory.len() {
            return Err(shape_err("classifier head", inventory.len(), width));
        }
        for l in &stack {
            if let LayerSpec::Dense(d) = l {
                params.get(&format!("{}.w", d.name))?;
            }
        }
        Ok(Self {
            params,
            stack,
            inventory,
            features,
            frozen,
        })
    }

    pub fn classes(&self) -> usize {
        self.inventory.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the model as trained; the synthesizer only accepts frozen classifiers.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn cast<U: Real>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            params: self.params.cast(),
            stack: self.stack.clone(),
            inventory: self.inventory.clone(),
            features: self.features,
            frozen: self.frozen,
        }
    }

    pub fn classify_frames(&self, frames: &MelSpectrogram) -> Result<LinguisticFeatures> {
        classify_frames(self, frames)
    }

    /// Waveform → log-mel → posteriors.
    pub fn classify_waveform(&self, w: &Waveform) -> Result<LinguisticFeatures> {
        classify_frames(self, &self.features.analyze(w)?)
    }
}

/// Per-frame phoneme posteriors from log-mel frames.
pub fn classify_frames<T: Real>(model: &ClassifierModel<T>, frames: &MelSpectrogram) -> Result<LinguisticFeatures> {
    if frames.n_mels != model.features.n_mels {
        return Err(shape_err("classifier input", model.features.n_mels, frames.n_mels));
    }
    if frames.frames == 0 {
        return Err(invalid("no frames to classify"));
    }
    let x = model.features.model_input::<T>(frames);
    let out = forward(&model.params, &model.stack, &x, None)?;
    let probs = out.output.data().iter().map(|v| v.f64()).collect();
    // f32 softmax rows can drift from 1 by a few ulps; renormalise in f64.
    let mut lf = LinguisticFeatures {
        probs,
        frames: frames.frames,
        classes: model.classes(),
    };
    for t in 0..lf.frames {
        let row = &mut lf.probs[t * lf.classes..(t + 1) * lf.classes];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    Ok(lf)
}

/// `Σ_t CE(c_t, y_t)`, summed over frames.
pub fn classifier_loss(probs: &LinguisticFeatures, labels: &PhonemeLabels) -> Result<f64> {
    if probs.frames != labels.len() {
        return Err(shape_err("classifier_loss", probs.frames, labels.len()));
    }
    crate::neural::cross_entropy(&Tensor::matrix(probs.frames, probs.classes, probs.probs.clone()), &labels.indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inventory() -> PhonemeInventory {
        "sil aa ah iy".parse().unwrap()
    }

    fn mel(frames: usize, n_mels: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MelSpectrogram {
            mels: (0..frames * n_mels).map(|_| rng.random_range(-5.0..3.0)).collect(),
            frames,
            n_mels,
            framing: Framing::default(),
        }
    }

    #[test]
    fn inventory_validation() {
        assert!(PhonemeInventory::new(["a"]).is_err());
        assert!(PhonemeInventory::new(["a", "b", "a"]).is_err());
        let inv = inventory();
        assert_eq!(inv.index_of("ah"), Some(2));
        assert_eq!(inv.to_string().parse::<PhonemeInventory>().unwrap(), inv);
    }

    #[test]
    fn labels_must_be_in_range() {
        assert!(PhonemeLabels::new(vec![0, 4], &inventory()).is_err());
        assert!(PhonemeLabels::new(vec![0, 3], &inventory()).is_ok());
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ClassifierModel::<f32>::new(inventory(), FeatureConfig::default(), 16, &mut rng);
        m.params = m.params.zeroed();
        let lf = m.classify_frames(&mel(6, 40, 1)).unwrap();
        assert!(lf.probs.iter().all(|&p| (p - 0.25).abs() < 1e-7));
    }

    #[test]
    fn rows_are_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ClassifierModel::<f32>::new(inventory(), FeatureConfig::default(), 16, &mut rng);
        let lf = m.classify_frames(&mel(9, 40, 2)).unwrap();
        for t in 0..lf.frames {
            assert!((lf.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(lf.row(t).iter().all(|&p| p > 0.0));
        }
        assert_eq!(lf, m.classify_frames(&mel(9, 40, 2)).unwrap());
    }

    #[test]
    fn width_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ClassifierModel::<f32>::new(inventory(), FeatureConfig::default(), 8, &mut rng);
        assert!(m.classify_frames(&mel(3, 20, 2)).is_err());
    }

    #[test]
    fn loss_special_cases() {
        let inv = inventory();
        let perfect = LinguisticFeatures::new(vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2, 4).unwrap();
        let labels = PhonemeLabels::new(vec![1, 0], &inv).unwrap();
        assert_eq!(classifier_loss(&perfect, &labels).unwrap(), 0.0);

        let uniform = LinguisticFeatures::new(vec![0.25; 12], 3, 4).unwrap();
        let labels = PhonemeLabels::new(vec![1, 0, 3], &inv).unwrap();
        let l = classifier_loss(&uniform, &labels).unwrap();
        assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);

        let short = PhonemeLabels::new(vec![1], &inv).unwrap();
        assert!(classifier_loss(&uniform, &short).is_err());
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut probs = Vec::new();
        for _ in 0..3 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / s));
        }
        let targets = vec![2, 0, 3];
        let mut oracle = 0.0;
        for t in 0..3 {
            oracle += -(probs[t * 4 + targets[t]]).ln();
        }
        let lf = LinguisticFeatures::new(probs, 3, 4).unwrap();
        let l = classifier_loss(&lf, &PhonemeLabels::new(targets, &inventory()).unwrap()).unwrap();
        assert!((l - oracle).abs() < 1e-12);
    }
}
