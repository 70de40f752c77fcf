use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{baseline_graph, loss_graph, BaselineModel, BaselineSpec, SynthSpec, SynthesizerModel};
use crate::error::{invalid, shape_err, Error, Result};
use crate::neural::{clip_global_norm, optimizer_step, AdamState, Graph, NetworkParams, Real, Tensor, Var};
use crate::phoneme::{classify_frames, ClassifierModel, LinguisticFeatures};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{LinSpectrogram, Waveform};

/// Target spectrogram with the frozen classifier's condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingUtterance {
    pub x: LinSpectrogram,
    pub c: LinguisticFeatures,
}

/// Analyses target-speaker audio with a frozen classifier.
pub fn prepare_corpus(corpus: &[Waveform], classifier: &ClassifierModel) -> Result<Vec<TrainingUtterance>> {
    if !classifier.is_frozen() {
        return Err(Error::ModelNotReady("the phoneme classifier must be trained and frozen first".into()));
    }
    if corpus.is_empty() {
        return Err(invalid("empty synthesizer corpus"));
    }
    corpus
        .par_iter()
        .map(|w| {
            let x = classifier.features.spectrogram(w)?;
            let c = classify_frames(classifier, &classifier.features.mel_of(&x)?)?;
            Ok(TrainingUtterance { x, c })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub hidden: usize,
    pub latent_dim: usize,
    pub flow_steps: usize,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Global gradient-norm ceiling per step; `0` disables clipping.
    pub clip_norm: f64,
    /// Raw-to-network magnitude factor; `None` picks `1 / RMS` of the corpus.
    pub mag_scale: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hidden: super::DEFAULT_HIDDEN,
            latent_dim: super::DEFAULT_LATENT_DIM,
            flow_steps: 0,
            beta: 1.0,
            epochs: 40,
            lr: 1e-3,
            clip_norm: 5.0,
            mag_scale: None,
        }
    }
}

/// Mean per-utterance losses in the network domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEpoch {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrainingReport {
    /// Losses before the first update (`epoch` 0).
    pub initial: SynthEpoch,
    pub epochs: Vec<SynthEpoch>,
    pub mag_scale: f64,
}

impl SynthTrainingReport {
    pub fn last(&self) -> SynthEpoch {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

fn check(data: &[TrainingUtterance]) -> Result<(usize, usize)> {
    let first = data.first().ok_or_else(|| invalid("empty synthesizer corpus"))?;
    let (classes, bins) = (first.c.classes, first.x.bins());
    for (i, u) in data.iter().enumerate() {
        if u.x.frames != u.c.frames {
            return Err(shape_err(&format!("utterance {i}"), u.c.frames, u.x.frames));
        }
        if u.c.classes != classes || u.x.bins() != bins || u.x.framing != first.x.framing {
            return Err(invalid(format!("utterance {i} differs in shape from utterance 0")));
        }
    }
    Ok((classes, bins))
}

/// `1 / RMS` over every magnitude in the corpus.
pub fn auto_mag_scale(data: &[TrainingUtterance]) -> f64 {
    let (sum, n) = data.iter().fold((0.0, 0usize), |(s, n), u| {
        (s + u.x.mags.iter().map(|v| v * v).sum::<f64>(), n + u.x.mags.len())
    });
    let rms = (sum / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        1.0 / rms
    } else {
        1.0
    }
}

fn noise(seeds: &SeedTree, index: u64, dim: usize) -> Vec<f64> {
    let mut rng = seeds.rng(Purpose::Eps, index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

const EVAL_STREAM: u64 = 1 << 40;

fn scalar<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].f64()
}

fn mean_epoch(epoch: usize, parts: &[(f64, f64, f64)]) -> SynthEpoch {
    let n = parts.len() as f64;
    let s = parts
        .iter()
        .fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    SynthEpoch {
        epoch,
        total: s.0 / n,
        recon: s.1 / n,
        kl: s.2 / n,
    }
}

/// Shared loop: shuffle, one utterance per Adam step, evaluation after each epoch.
fn fit<T: Real>(
    params: &mut NetworkParams<T>,
    n: usize,
    config: &SynthConfig,
    seeds: &SeedTree,
    step_graph: impl Fn(&NetworkParams<T>, usize, Option<u64>) -> Result<(Graph<T>, Var, Var, Var)> + Sync,
) -> Result<(SynthEpoch, Vec<SynthEpoch>)> {
    let evaluate = |params: &NetworkParams<T>, epoch: usize| -> Result<SynthEpoch> {
        let parts: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (g, total, recon, kl) = step_graph(params, i, Some(EVAL_STREAM + i as u64))?;
                Ok((scalar(&g, total), scalar(&g, recon), scalar(&g, kl)))
            })
            .collect::<Result<_>>()?;
        Ok(mean_epoch(epoch, &parts))
    };
    let initial = evaluate(params, 0)?;
    let mut opt = AdamState::new(params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut seeds.rng(Purpose::Data, epoch as u64));
        for &i in &order {
            let (g, total, _, _) = step_graph(params, i, Some(((epoch as u64) << 20) | i as u64))?;
            let mut grads = g.gradients_for(total, params)?;
            clip_global_norm(&mut grads, config.clip_norm);
            optimizer_step(params, &grads, &mut opt, config.lr)?;
        }
        epochs.push(evaluate(params, epoch + 1)?);
    }
    Ok((initial, epochs))
}

/// Trains the CVAE (with flow steps when `config.flow_steps > 0`) on
/// target-speaker audio conditioned by a frozen classifier.
pub fn train_synthesizer(
    corpus: &[Waveform],
    classifier: &ClassifierModel,
    config: &SynthConfig,
    seed: u64,
) -> Result<(SynthesizerModel, SynthTrainingReport)> {
    fit_synthesizer(&prepare_corpus(corpus, classifier)?, config, seed)
}

/// [`train_synthesizer`] on already-analysed utterances.
pub fn fit_synthesizer(
    data: &[TrainingUtterance],
    config: &SynthConfig,
    seed: u64,
) -> Result<(SynthesizerModel, SynthTrainingReport)> {
    let (classes, bins) = check(data)?;
    let framing = data[0].x.framing;
    let mag_scale = config.mag_scale.unwrap_or_else(|| auto_mag_scale(data));
    let spec = SynthSpec {
        classes,
        bins,
        hidden: config.hidden,
        latent_dim: config.latent_dim,
        flow_steps: config.flow_steps,
    };
    let seeds = SeedTree::new(seed);
    let mut model = SynthesizerModel::<f32>::new(spec, framing, mag_scale, &mut seeds.rng(Purpose::Init, 1))?;
    let inputs: Vec<(Tensor<f32>, Tensor<f32>)> = data
        .iter()
        .map(|u| (model.scaled_input(&u.x), u.c.to_tensor()))
        .collect();
    let step = |params: &NetworkParams<f32>, i: usize, stream: Option<u64>| {
        let eps = noise(&seeds, stream.unwrap_or(0), spec.latent_dim);
        let mut g = Graph::new();
        let x = g.constant(inputs[i].0.clone());
        let c = g.constant(inputs[i].1.clone());
        let l = loss_graph(&mut g, params, &spec, x, c, &eps, config.beta)?;
        Ok((g, l.total, l.recon, l.kl))
    };
    let (initial, epochs) = fit(&mut model.params, data.len(), config, &seeds, step)?;
    Ok((
        model,
        SynthTrainingReport {
            initial,
            epochs,
            mag_scale,
        },
    ))
}

/// Trains the deterministic baseline with the reconstruction term only.
pub fn train_baseline(
    corpus: &[Waveform],
    classifier: &ClassifierModel,
    config: &SynthConfig,
    seed: u64,
) -> Result<(BaselineModel, SynthTrainingReport)> {
    fit_baseline(&prepare_corpus(corpus, classifier)?, config, seed)
}

/// [`train_baseline`] on already-analysed utterances.
pub fn fit_baseline(
    data: &[TrainingUtterance],
    config: &SynthConfig,
    seed: u64,
) -> Result<(BaselineModel, SynthTrainingReport)> {
    let (classes, bins) = check(data)?;
    let framing = data[0].x.framing;
    let mag_scale = config.mag_scale.unwrap_or_else(|| auto_mag_scale(data));
    let spec = BaselineSpec::new(classes, bins);
    let seeds = SeedTree::new(seed);
    let mut model = BaselineModel::<f32>::new(spec, framing, mag_scale, &mut seeds.rng(Purpose::Init, 2))?;
    let inputs: Vec<(Tensor<f32>, Tensor<f32>)> = data
        .iter()
        .map(|u| {
            let x = Tensor::matrix(u.x.frames, bins, u.x.mags.iter().map(|&v| (v * mag_scale) as f32).collect());
            (x, u.c.to_tensor())
        })
        .collect();
    let step = |params: &NetworkParams<f32>, i: usize, _: Option<u64>| {
        let mut g = Graph::new();
        let x = g.constant(inputs[i].0.clone());
        let c = g.constant(inputs[i].1.clone());
        let y = baseline_graph(&mut g, params, &spec, c)?;
        let d = g.sub(y, x)?;
        let d2 = g.square(d);
        let recon = g.mean(d2);
        let zero = g.constant(Tensor::scalar(0.0));
        Ok((g, recon, recon, zero))
    };
    let (initial, epochs) = fit(&mut model.params, data.len(), config, &seeds, step)?;
    Ok((
        model,
        SynthTrainingReport {
            initial,
            epochs,
            mag_scale,
        },
    ))
}
