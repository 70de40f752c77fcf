//! Synthetic formant-speech corpus with exact labels and pitch.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::labels::{frame_labels, Segment};
use crate::error::{invalid, Error, Result};
use crate::phoneme::{FeatureConfig, LabeledFrames, PhonemeInventory, PhonemeLabels};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{F0Contour, Framing, Waveform};

/// Acoustic recipe of a toy phoneme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhonemeSound {
    Silence,
    /// Harmonic source shaped by three resonances `(centre Hz, bandwidth Hz, gain)`.
    Vowel([(f64, f64, f64); 3]),
    /// Band-passed noise `(centre Hz, Q)`.
    Fricative(f64, f64),
}

impl PhonemeSound {
    pub fn is_voiced(&self) -> bool {
        matches!(self, PhonemeSound::Vowel(_))
    }
}

/// The 8-symbol toy inventory. `aa` and `ah` differ by under 5% in their
/// first two formants, less than the spread between speakers, which makes them the designated confusable pair.
pub fn toy_phonemes() -> Vec<(&'static str, PhonemeSound)> {
    let v = |f: [f64; 3]| PhonemeSound::Vowel([(f[0], 90.0, 1.0), (f[1], 110.0, 0.6), (f[2], 160.0, 0.3)]);
    vec![
        ("sil", PhonemeSound::Silence),
        ("aa", v([700.0, 1130.0, 2440.0])),
        ("ah", v([670.0, 1180.0, 2420.0])),
        ("iy", v([270.0, 2290.0, 3010.0])),
        ("uw", v([300.0, 870.0, 2240.0])),
        ("eh", v([530.0, 1840.0, 2480.0])),
        ("s", PhonemeSound::Fricative(5500.0, 2.0)),
        ("sh", PhonemeSound::Fricative(2800.0, 2.0)),
    ]
}

pub fn toy_inventory() -> PhonemeInventory {
    PhonemeInventory::new(toy_phonemes().into_iter().map(|(s, _)| s)).expect("static inventory is valid")
}

/// The pair built to be confused.
pub const CONFUSABLE_PAIR: (&str, &str) = ("aa", "ah");

/// Shape of an utterance's pitch trajectory over normalised time `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContourFamily {
    Flat,
    Rising,
    Falling,
    Peaked,
}

impl ContourFamily {
    pub const ALL: [ContourFamily; 4] = [
        ContourFamily::Flat,
        ContourFamily::Rising,
        ContourFamily::Falling,
        ContourFamily::Peaked,
    ];

    /// Multiplier on the base pitch.
    pub fn factor(self, u: f64, depth: f64) -> f64 {
        match self {
            ContourFamily::Flat => 1.0,
            ContourFamily::Rising => 1.0 - depth + 2.0 * depth * u,
            ContourFamily::Falling => 1.0 + depth - 2.0 * depth * u,
            ContourFamily::Peaked => 1.0 - depth + 2.0 * depth * (PI * u).sin(),
        }
    }
}

impl fmt::Display for ContourFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContourFamily::Flat => "flat",
            ContourFamily::Rising => "rising",
            ContourFamily::Falling => "falling",
            ContourFamily::Peaked => "peaked",
        })
    }
}

impl FromStr for ContourFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| invalid(format!("unknown contour family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::HeldOut),
            _ => Err(invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    /// Sample-aligned, sorted, non-overlapping.
    pub segments: Vec<Segment>,
    pub labels: PhonemeLabels,
    /// True per-frame pitch; `None` on frames whose majority label is unvoiced.
    pub f0: Option<F0Contour>,
    pub speaker: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub inventory: PhonemeInventory,
    pub framing: Framing,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Log-mel frames with labels for every utterance of `split`.
    pub fn labeled(&self, features: &FeatureConfig, split: Split) -> Result<Vec<LabeledFrames>> {
        let utts: Vec<&Utterance> = self.split(split).collect();
        utts.par_iter()
            .map(|u| {
                Ok(LabeledFrames {
                    mel: features.analyze(&u.waveform)?,
                    labels: u.labels.clone(),
                })
            })
            .collect()
    }

    /// Utterances of one speaker in one split.
    pub fn speaker(&self, speaker: usize, split: Split) -> Vec<&Utterance> {
        self.split(split).filter(|u| u.speaker == speaker).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub speakers: usize,
    pub held_out: f64,
    pub segments: usize,
    pub min_segment_ms: f64,
    pub max_segment_ms: f64,
    /// Relative pitch excursion of the non-flat contours.
    pub contour_depth: f64,
    /// Relative standard deviation of each vowel token's formants around the
    /// speaker's values.
    pub formant_jitter: f64,
    pub contours: Vec<ContourFamily>,
    pub framing: Framing,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 200,
            speakers: 5,
            held_out: 0.2,
            segments: 7,
            min_segment_ms: 100.0,
            max_segment_ms: 200.0,
            contour_depth: 0.2,
            formant_jitter: 0.03,
            contours: ContourFamily::ALL.to_vec(),
            framing: Framing::default(),
        }
    }
}

/// Per-speaker voice: a formant scale and a base pitch. Speaker 0 is the
/// conversion target and has the reference voice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub formant_scale: f64,
    pub f0: f64,
}

pub fn speaker_voice(seeds: &SeedTree, speaker: usize) -> Voice {
    if speaker == 0 {
        return Voice {
            formant_scale: 1.0,
            f0: 120.0,
        };
    }
    let mut rng = seeds.rng(Purpose::Corpus, (1 << 32) | speaker as u64);
    Voice {
        formant_scale: rng.random_range(0.93..1.07),
        f0: rng.random_range(100.0..200.0),
    }
}

const UNVOICED_RMS: f64 = 0.05;
const VOICED_RMS: f64 = 0.12;
const SILENCE_RMS: f64 = 0.003;
const FADE_MS: f64 = 4.0;
const MAX_HARMONIC_HZ: f64 = 5000.0;
const ENVELOPE_BLOCK: usize = 32;

/// Renders `segments` with the pitch trajectory `f0_at(sample)`.
fn render(
    segments: &[Segment],
    sounds: &[PhonemeSound],
    voice: Voice,
    jitter: f64,
    f0_at: &dyn Fn(usize) -> f64,
    sr: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let total = segments.last().map_or(0, |s| s.end);
    let mut out = vec![0.0; total];
    let mut phase = 0.0;
    // the glottal phase runs through every sample so voicing restarts smoothly
    let phases: Vec<f64> = (0..total)
        .map(|n| {
            let p = phase;
            phase = (phase + 2.0 * PI * f0_at(n) / sr) % (2.0 * PI);
            p
        })
        .collect();
    for seg in segments {
        let len = seg.end - seg.start;
        let mut buf = vec![0.0; len];
        let target_rms = match sounds[seg.phoneme] {
            PhonemeSound::Silence => {
                buf.iter_mut().for_each(|b| *b = rng.sample::<f64, _>(StandardNormal));
                SILENCE_RMS
            }
            PhonemeSound::Fricative(centre, q) => {
                let w0 = 2.0 * PI * (centre * voice.formant_scale).min(0.45 * sr) / sr;
                let alpha = w0.sin() / (2.0 * q);
                let a0 = 1.0 + alpha;
                let (b0, b2) = (alpha / a0, -alpha / a0);
                let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
                let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
                for b in buf.iter_mut() {
                    let x: f64 = rng.sample(StandardNormal);
                    let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                    x2 = x1;
                    x1 = x;
                    y2 = y1;
                    y1 = y;
                    *b = y;
                }
                UNVOICED_RMS
            }
            PhonemeSound::Vowel(formants) => {
                let centres: Vec<f64> = formants
                    .iter()
                    .map(|&(fc, _, _)| {
                        let j: f64 = rng.sample(StandardNormal);
                        fc * voice.formant_scale * (1.0 + jitter * j).max(0.5)
                    })
                    .collect();
                let mut amps = Vec::new();
                for block in (0..len).step_by(ENVELOPE_BLOCK) {
                    let f0 = f0_at(seg.start + block);
                    let harmonics = (MAX_HARMONIC_HZ / f0).floor() as usize;
                    amps.clear();
                    amps.extend((1..=harmonics).map(|h| {
                        let f = h as f64 * f0;
                        formants
                            .iter()
                            .zip(&centres)
                            .map(|(&(_, bw, g), &fc)| {
                                let d = (f - fc) / bw;
                                g / (1.0 + d * d)
                            })
                            .sum::<f64>()
                    }));
                    for i in block..(block + ENVELOPE_BLOCK).min(len) {
                        let ph = phases[seg.start + i];
                        buf[i] = amps
                            .iter()
                            .enumerate()
                            .map(|(k, a)| a * ((k + 1) as f64 * ph).sin())
                            .sum();
                    }
                }
                VOICED_RMS
            }
        };
        let rms = (buf.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
        let gain = if rms > 0.0 { target_rms / rms } else { 0.0 };
        let fade = ((FADE_MS * sr / 1000.0) as usize).min(len / 2);
        for (i, b) in buf.iter_mut().enumerate() {
            let edge = i.min(len - 1 - i);
            let w = if edge < fade {
                0.5 - 0.5 * (PI * (edge as f64 + 0.5) / fade as f64).cos()
            } else {
                1.0
            };
            out[seg.start + i] = *b * gain * w;
        }
    }
    out
}

fn draw_utterance(
    index: usize,
    config: &CorpusConfig,
    seeds: &SeedTree,
    sounds: &[PhonemeSound],
) -> Result<(Waveform, Vec<Segment>, F0Contour, usize)> {
    let mut rng = seeds.rng(Purpose::Corpus, index as u64);
    let speaker = index % config.speakers;
    let voice = speaker_voice(seeds, speaker);
    let sr = config.framing.sample_rate as f64;
    let k = sounds.len();

    let mut seq = vec![0usize];
    while seq.len() + 1 < config.segments.max(3) {
        let prev = *seq.last().unwrap_or(&0);
        let next = loop {
            let p = rng.random_range(1..k);
            if p != prev {
                break p;
            }
        };
        seq.push(next);
    }
    seq.push(0);
    let mut segments = Vec::with_capacity(seq.len());
    let mut start = 0;
    for &p in &seq {
        let ms = rng.random_range(config.min_segment_ms..=config.max_segment_ms);
        let len = (ms * sr / 1000.0).round() as usize;
        segments.push(Segment {
            start,
            end: start + len,
            phoneme: p,
        });
        start += len;
    }
    let total = start;
    let family = config.contours[rng.random_range(0..config.contours.len())];
    let base = voice.f0 * rng.random_range(0.9..1.1);
    let depth = config.contour_depth;
    let f0_at = move |n: usize| base * family.factor(n as f64 / total.max(1) as f64, depth);

    let samples = render(&segments, sounds, voice, config.formant_jitter, &f0_at, sr, &mut rng);
    let waveform = Waveform::new(samples, config.framing.sample_rate)?.peak_normalized(0.9);
    let labels = frame_labels(&segments, waveform.len(), &config.framing)?;
    let f0 = labels
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            sounds[p]
                .is_voiced()
                .then(|| f0_at(t * config.framing.hop + config.framing.frame_len / 2))
        })
        .collect();
    Ok((waveform, segments, f0, speaker))
}

/// Deterministic corpus: utterance `i` belongs to speaker `i mod speakers`;
/// the last `held_out` fraction of each speaker's utterances is held out.
pub fn generate_corpus(seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    if config.utterances == 0 || config.speakers == 0 {
        return Err(invalid("a corpus needs at least one utterance and one speaker"));
    }
    if !(0.0..1.0).contains(&config.held_out) {
        return Err(invalid("held-out fraction must be in [0, 1)"));
    }
    if !(0.0..0.5).contains(&config.formant_jitter) {
        return Err(invalid("formant jitter must be in [0, 0.5)"));
    }
    if config.contours.is_empty() {
        return Err(invalid("no pitch contour families"));
    }
    if !(0.0 < config.min_segment_ms && config.min_segment_ms <= config.max_segment_ms) {
        return Err(invalid("segment durations must satisfy 0 < min <= max"));
    }
    config.framing.validate()?;
    let seeds = SeedTree::new(seed);
    let phonemes = toy_phonemes();
    let sounds: Vec<PhonemeSound> = phonemes.iter().map(|p| p.1).collect();
    let inventory = toy_inventory();
    let drawn: Vec<_> = (0..config.utterances)
        .into_par_iter()
        .map(|i| draw_utterance(i, config, &seeds, &sounds))
        .collect::<Result<_>>()?;

    let mut per_speaker = vec![0usize; config.speakers];
    for i in 0..config.utterances {
        per_speaker[i % config.speakers] += 1;
    }
    let mut utterances = Vec::with_capacity(config.utterances);
    for (i, (waveform, segments, f0, speaker)) in drawn.into_iter().enumerate() {
        let rank = i / config.speakers;
        let count = per_speaker[speaker];
        let held = (config.held_out * count as f64).round() as usize;
        let split = if rank + held >= count { Split::HeldOut } else { Split::Train };
        let labels = PhonemeLabels::new(frame_labels(&segments, waveform.len(), &config.framing)?, &inventory)?;
        utterances.push(Utterance {
            id: format!("u{i:04}"),
            waveform,
            segments,
            labels,
            f0: Some(f0),
            speaker,
            split,
        });
    }
    Ok(Corpus {
        utterances,
        inventory,
        framing: config.framing,
    })
}
