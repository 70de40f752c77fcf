//! Run configuration: flat `key = value` lines with `#` comments.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! [`RunConfig::to_text`] lists every key and parses back to the same value.

use std::path::Path;

use super::corpus::{ContourFamily, CorpusConfig};
use crate::error::{Error, Result};
use crate::phoneme::{ClassifierConfig, FeatureConfig};
use crate::pipeline::{SamplerConfig, VocoderConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    /// `synth.flow_steps` only applies when the flow variant is requested.
    pub synth: SynthConfig,
    pub flow_steps: usize,
    /// Speaker whose training utterances form the synthesizer corpus.
    pub target_speaker: usize,
    pub sampler: SamplerConfig,
    pub vocoder: VocoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            synth: SynthConfig::default(),
            flow_steps: crate::flow::DEFAULT_FLOW_STEPS,
            target_speaker: 0,
            sampler: SamplerConfig::default(),
            vocoder: VocoderConfig::default(),
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}`"))
}

fn opt_f64(v: &str, none: &str) -> std::result::Result<Option<f64>, String> {
    if v == none {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(n, format!("expected `key = value`, got `{line}`")))?;
            c.apply(k.trim(), v.trim()).map_err(|m| cfg_err(n, format!("{}: {m}", k.trim())))?;
        }
        c.corpus.framing = c.features.framing;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    fn apply(&mut self, k: &str, v: &str) -> std::result::Result<(), String> {
        match k {
            "seed" => self.seed = num(v)?,
            "corpus.utterances" => self.corpus.utterances = num(v)?,
            "corpus.speakers" => self.corpus.speakers = num(v)?,
            "corpus.held_out" => self.corpus.held_out = num(v)?,
            "corpus.segments" => self.corpus.segments = num(v)?,
            "corpus.min_segment_ms" => self.corpus.min_segment_ms = num(v)?,
            "corpus.max_segment_ms" => self.corpus.max_segment_ms = num(v)?,
            "corpus.contour_depth" => self.corpus.contour_depth = num(v)?,
            "corpus.formant_jitter" => self.corpus.formant_jitter = num(v)?,
            "corpus.contours" => {
                self.corpus.contours = v
                    .split(',')
                    .map(|s| s.trim().parse::<ContourFamily>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "signal.sample_rate" => self.features.framing.sample_rate = num(v)?,
            "signal.frame_len" => self.features.framing.frame_len = num(v)?,
            "signal.hop" => self.features.framing.hop = num(v)?,
            "signal.n_fft" => self.features.framing.n_fft = num(v)?,
            "signal.n_mels" => self.features.n_mels = num(v)?,
            "signal.fmin" => self.features.fmin = num(v)?,
            "signal.fmax" => self.features.fmax = num(v)?,
            "signal.norm" => self.features.norm = v.parse().map_err(|e: Error| e.to_string())?,
            "classifier.hidden" => self.classifier.hidden = num(v)?,
            "classifier.epochs" => self.classifier.epochs = num(v)?,
            "classifier.lr" => self.classifier.lr = num(v)?,
            "classifier.clip_norm" => self.classifier.clip_norm = num(v)?,
            "synth.hidden" => self.synth.hidden = num(v)?,
            "synth.latent_dim" => self.synth.latent_dim = num(v)?,
            "synth.flow_steps" => self.flow_steps = num(v)?,
            "synth.beta" => self.synth.beta = num(v)?,
            "synth.epochs" => self.synth.epochs = num(v)?,
            "synth.lr" => self.synth.lr = num(v)?,
            "synth.clip_norm" => self.synth.clip_norm = num(v)?,
            "synth.mag_scale" => self.synth.mag_scale = opt_f64(v, "auto")?,
            "synth.target_speaker" => self.target_speaker = num(v)?,
            "sampler.clamp" => self.sampler.clamp_radius = opt_f64(v, "none")?,
            "sampler.samples" => self.sampler.num_samples = num(v)?,
            "vocoder.power" => self.vocoder.power = num(v)?,
            "vocoder.gl_iters" => self.vocoder.gl_iters = num(v)?,
            "vocoder.seed" => self.vocoder.seed = num(v)?,
            "f0.fmin" => self.vocoder.f0_min = num(v)?,
            "f0.fmax" => self.vocoder.f0_max = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.corpus;
        let f = &self.features;
        let opt = |v: Option<f64>, none: &str| v.map_or(none.to_string(), |x| format!("{x:?}"));
        vec![
            ("seed", self.seed.to_string()),
            ("corpus.utterances", c.utterances.to_string()),
            ("corpus.speakers", c.speakers.to_string()),
            ("corpus.held_out", format!("{:?}", c.held_out)),
            ("corpus.segments", c.segments.to_string()),
            ("corpus.min_segment_ms", format!("{:?}", c.min_segment_ms)),
            ("corpus.max_segment_ms", format!("{:?}", c.max_segment_ms)),
            ("corpus.contour_depth", format!("{:?}", c.contour_depth)),
            ("corpus.formant_jitter", format!("{:?}", c.formant_jitter)),
            (
                "corpus.contours",
                c.contours.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            ),
            ("signal.sample_rate", f.framing.sample_rate.to_string()),
            ("signal.frame_len", f.framing.frame_len.to_string()),
            ("signal.hop", f.framing.hop.to_string()),
            ("signal.n_fft", f.framing.n_fft.to_string()),
            ("signal.n_mels", f.n_mels.to_string()),
            ("signal.fmin", format!("{:?}", f.fmin)),
            ("signal.fmax", format!("{:?}", f.fmax)),
            ("signal.norm", f.norm.to_string()),
            ("classifier.hidden", self.classifier.hidden.to_string()),
            ("classifier.epochs", self.classifier.epochs.to_string()),
            ("classifier.lr", format!("{:?}", self.classifier.lr)),
            ("classifier.clip_norm", format!("{:?}", self.classifier.clip_norm)),
            ("synth.hidden", self.synth.hidden.to_string()),
            ("synth.latent_dim", self.synth.latent_dim.to_string()),
            ("synth.flow_steps", self.flow_steps.to_string()),
            ("synth.beta", format!("{:?}", self.synth.beta)),
            ("synth.epochs", self.synth.epochs.to_string()),
            ("synth.lr", format!("{:?}", self.synth.lr)),
            ("synth.clip_norm", format!("{:?}", self.synth.clip_norm)),
            ("synth.mag_scale", opt(self.synth.mag_scale, "auto")),
            ("synth.target_speaker", self.target_speaker.to_string()),
            ("sampler.clamp", opt(self.sampler.clamp_radius, "none")),
            ("sampler.samples", self.sampler.num_samples.to_string()),
            ("vocoder.power", format!("{:?}", self.vocoder.power)),
            ("vocoder.gl_iters", self.vocoder.gl_iters.to_string()),
            ("vocoder.seed", self.vocoder.seed.to_string()),
            ("f0.fmin", format!("{:?}", self.vocoder.f0_min)),
            ("f0.fmax", format!("{:?}", self.vocoder.f0_max)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Synthesizer settings with the flow enabled or not.
    pub fn synth_config(&self, flow: bool) -> SynthConfig {
        SynthConfig {
            flow_steps: if flow { self.flow_steps } else { 0 },
            ..self.synth
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.corpus.framing.validate()?;
        self.features.framing.validate()?;
        if self.corpus.framing != self.features.framing {
            return bad("corpus and feature framings differ");
        }
        let nyquist = self.features.framing.sample_rate as f64 / 2.0;
        if !(0.0 <= self.features.fmin && self.features.fmin < self.features.fmax && self.features.fmax <= nyquist) {
            return bad("signal.fmin/fmax must satisfy 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.features.n_mels == 0 {
            return bad("signal.n_mels must be positive");
        }
        if !(0.0..1.0).contains(&self.corpus.held_out) {
            return bad("corpus.held_out must be in [0, 1)");
        }
        if self.corpus.utterances == 0 || self.corpus.speakers == 0 || self.corpus.contours.is_empty() {
            return bad("corpus needs utterances, speakers and contour families");
        }
        if !(0.0..0.5).contains(&self.corpus.formant_jitter) {
            return bad("corpus.formant_jitter must be in [0, 0.5)");
        }
        if !(self.corpus.min_segment_ms > 0.0 && self.corpus.min_segment_ms <= self.corpus.max_segment_ms) {
            return bad("segment durations must satisfy 0 < min <= max");
        }
        if self.target_speaker >= self.corpus.speakers {
            return bad("synth.target_speaker must name an existing speaker");
        }
        for (name, lr) in [("classifier.lr", self.classifier.lr), ("synth.lr", self.synth.lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classifier.hidden == 0 || self.synth.hidden == 0 || self.synth.latent_dim == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.synth.beta.is_finite() && self.synth.beta >= 0.0) {
            return bad("synth.beta must be non-negative");
        }
        if self.classifier.clip_norm < 0.0 || self.synth.clip_norm < 0.0 {
            return bad("clip norms must be non-negative");
        }
        if self.synth.mag_scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return bad("synth.mag_scale must be positive or `auto`");
        }
        self.sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.vocoder.power.is_finite() && self.vocoder.power > 0.0) {
            return bad("vocoder.power must be positive");
        }
        if !(0.0 < self.vocoder.f0_min && self.vocoder.f0_min < self.vocoder.f0_max && self.vocoder.f0_max < nyquist) {
            return bad("f0.fmin/fmax must satisfy 0 < fmin < fmax < sample_rate / 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), c);
        let d = RunConfig::parse("synth.beta = 0.5 # weaker KL\nsampler.clamp = none\ncorpus.contours = flat,rising\n").unwrap();
        assert_eq!(d.synth.beta, 0.5);
        assert_eq!(d.sampler.clamp_radius, None);
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("seed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        assert!(RunConfig::parse("synth.lr = -1").is_err());
        assert!(RunConfig::parse("sampler.clamp = 0").is_err());
        assert!(RunConfig::parse("signal.hop = 0").is_err());
    }
}
