use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{ClassifierModel, FeatureConfig, PhonemeInventory, PhonemeLabels};
use crate::error::{invalid, shape_err, Result};
use crate::neural::{apply_stack, clip_global_norm, optimizer_step, AdamState, Graph, Real};
use crate::rng::{Purpose, SeedTree};
use crate::signal::MelSpectrogram;

/// One labelled utterance: log-mel frames with aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrames {
    pub mel: MelSpectrogram,
    pub labels: PhonemeLabels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Global gradient-norm ceiling per step; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 30,
            lr: 1e-3,
            clip_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-frame cross-entropy on the training split after the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean per-frame training loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
}

fn check(data: &[LabeledFrames], n_mels: usize) -> Result<()> {
    for (i, u) in data.iter().enumerate() {
        if u.mel.frames != u.labels.len() {
            return Err(shape_err(
                &format!("utterance {i} labels"),
                format!("{} frames", u.mel.frames),
                u.labels.len(),
            ));
        }
        if u.mel.n_mels != n_mels {
            return Err(shape_err(&format!("utterance {i} features"), n_mels, u.mel.n_mels));
        }
    }
    Ok(())
}

/// Summed loss and correct-frame count of one utterance (forward only).
fn evaluate<T: Real>(model: &ClassifierModel<T>, u: &LabeledFrames) -> Result<(f64, usize)> {
    let lf = super::classify_frames(model, &u.mel)?;
    let loss = super::classifier_loss(&lf, &u.labels)?;
    let correct = lf
        .argmax()
        .iter()
        .zip(&u.labels.indices)
        .filter(|(a, b)| a == b)
        .count();
    Ok((loss, correct))
}

fn dataset_stats<T: Real>(model: &ClassifierModel<T>, data: &[LabeledFrames]) -> Result<(f64, f64)> {
    let per: Vec<(f64, usize)> = data.par_iter().map(|u| evaluate(model, u)).collect::<Result<_>>()?;
    let frames: usize = data.iter().map(|u| u.labels.len()).sum();
    let loss: f64 = per.iter().map(|p| p.0).sum();
    let correct: usize = per.iter().map(|p| p.1).sum();
    Ok((loss / frames as f64, correct as f64 / frames as f64))
}

/// Minimises the summed frame cross-entropy, one utterance per update.
///
/// Returns a frozen model. Deterministic for a given seed.
pub fn train_classifier(
    train: &[LabeledFrames],
    eval: &[LabeledFrames],
    inventory: &PhonemeInventory,
    features: FeatureConfig,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifierModel, TrainingReport)> {
    if train.is_empty() {
        return Err(invalid("empty training corpus"));
    }
    check(train, features.n_mels)?;
    check(eval, features.n_mels)?;
    let seeds = SeedTree::new(seed);
    let mut model = ClassifierModel::<f32>::new(
        inventory.clone(),
        features,
        config.hidden,
        &mut seeds.rng(Purpose::Init, 0),
    );
    let inputs: Vec<_> = train.iter().map(|u| features.model_input::<f32>(&u.mel)).collect();
    let (initial_loss, _) = dataset_stats(&model, train)?;
    let mut opt = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut seeds.rng(Purpose::Data, epoch as u64));
        for &i in &order {
            let mut g = Graph::new();
            let x = g.constant(inputs[i].clone());
            let (probs, _) = apply_stack(&mut g, &model.params, &model.stack, x, None)?;
            let loss = g.cross_entropy(probs, &train[i].labels.indices)?;
            let mut grads = g.gradients_for(loss, &model.params)?;
            clip_global_norm(&mut grads, config.clip_norm);
            optimizer_step(&mut model.params, &grads, &mut opt, config.lr)?;
        }
        let (train_loss, train_accuracy) = dataset_stats(&model, train)?;
        let eval_accuracy = if eval.is_empty() {
            None
        } else {
            Some(dataset_stats(&model, eval)?.1)
        };
        epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            train_accuracy,
            eval_accuracy,
        });
    }
    Ok((
        model.freeze(),
        TrainingReport {
            initial_loss,
            epochs,
        },
    ))
}
