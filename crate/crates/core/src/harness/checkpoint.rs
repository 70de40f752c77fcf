//! Binary checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u32` version, a `u32`-length UTF-8
//! header of `key = value` lines, a `u32` tensor count, then one record per
//! tensor: `u32`-length name, `u32` rank, `u64` extents, `f32` LE values.
//! Tensors are written in sorted name order and header keys sorted, so
//! save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::neural::{stack_from_str, stack_to_string, NetworkParams, Tensor};
use crate::phoneme::{ClassifierModel, FeatureConfig, PhonemeInventory};
use crate::signal::{Framing, LinSpectrogram};
use crate::synth::{BaselineModel, BaselineSpec, SynthModel, SynthSpec, SynthesizerModel};

pub const MAGIC: [u8; 8] = *b"CVAEVCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Synth,
    SynthFlow,
    Baseline,
    /// A decoded spectrogram saved for plotting.
    Spectrogram,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Synth => "synth",
            ModelKind::SynthFlow => "synth+flow",
            ModelKind::Baseline => "baseline",
            ModelKind::Spectrogram => "spectrogram",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "classifier" => ModelKind::Classifier,
            "synth" => ModelKind::Synth,
            "synth+flow" => ModelKind::SynthFlow,
            "baseline" => ModelKind::Baseline,
            "spectrogram" => ModelKind::Spectrogram,
            _ => return Err(Error::Malformed(format!("unknown model kind `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub seed: u64,
    /// Layer specification, framing and training-config snapshot. `kind` and
    /// `seed` live in their own fields.
    pub header: BTreeMap<String, String>,
    pub tensors: NetworkParams<f32>,
}

fn check_header_entry(k: &str, v: &str) -> Result<()> {
    if k.is_empty() || k.contains(['=', '\n']) || k.trim() != k || v.contains('\n') || v.trim() != v {
        return Err(invalid(format!("header entry `{k}` cannot be stored")));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| invalid("checkpoint field exceeds 4 GiB"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            header: BTreeMap::new(),
            tensors: NetworkParams::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.header.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Malformed(format!("checkpoint header lacks `{key}`")))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Malformed(format!("checkpoint header `{key}` has bad value `{v}`")))
    }

    /// Adds `config.<key>` entries, e.g. from a run configuration.
    pub fn with_config<'a>(mut self, entries: impl IntoIterator<Item = (&'a str, String)>) -> Self {
        for (k, v) in entries {
            self.set(format!("config.{k}"), v);
        }
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = format!("kind = {}\nseed = {}\n", self.kind, self.seed);
        for (k, v) in &self.header {
            check_header_entry(k, v)?;
            if k == "kind" || k == "seed" {
                return Err(invalid(format!("header key `{k}` is reserved")));
            }
            header.push_str(&format!("{k} = {v}\n"));
        }
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.tensors.num_values());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in self.tensors.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic").map_err(|_| Error::BadMagic)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let mut header = BTreeMap::new();
        for line in r.string("header")?.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Malformed(format!("header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let kind: ModelKind = header
            .remove("kind")
            .ok_or_else(|| Error::Malformed("header lacks `kind`".into()))?
            .parse()?;
        let seed = header
            .remove("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed("header lacks a numeric `seed`".into()))?;
        let count = r.u32("tensor count")?;
        let mut tensors = NetworkParams::new();
        for i in 0..count {
            let name = r.string(&format!("tensor {i} name"))?.to_string();
            let rank = r.u32(&format!("{name} rank"))? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64(&format!("{name} extents"))? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Malformed(format!("{name}: extents {shape:?} overflow")))?;
            let data: Vec<f32> = r
                .take(n, &format!("{name} values"))?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.contains(&name) {
                return Err(Error::Malformed(format!("duplicate tensor `{name}`")));
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            kind,
            seed,
            header,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn set_framing(&mut self, f: &Framing) {
        self.set("framing.frame_len", f.frame_len);
        self.set("framing.hop", f.hop);
        self.set("framing.n_fft", f.n_fft);
        self.set("framing.sample_rate", f.sample_rate);
    }

    fn framing(&self) -> Result<Framing> {
        let f = Framing {
            frame_len: self.parse("framing.frame_len")?,
            hop: self.parse("framing.hop")?,
            n_fft: self.parse("framing.n_fft")?,
            sample_rate: self.parse("framing.sample_rate")?,
        };
        f.validate()?;
        Ok(f)
    }

    fn expect_kind(&self, allowed: &[ModelKind]) -> Result<()> {
        if !allowed.contains(&self.kind) {
            return Err(Error::KeyMismatch(format!(
                "checkpoint holds a {} model, expected {}",
                self.kind,
                allowed.iter().map(ToString::to_string).collect::<Vec<_>>().join(" or ")
            )));
        }
        Ok(())
    }

    pub fn from_classifier(model: &ClassifierModel, seed: u64) -> Self {
        let mut c = Self::new(ModelKind::Classifier, seed);
        c.set("spec.layers", stack_to_string(&model.stack));
        c.set("spec.inventory", &model.inventory);
        c.set("spec.frozen", model.is_frozen());
        let f = &model.features;
        c.set_framing(&f.framing);
        c.set("features.n_mels", f.n_mels);
        c.set("features.fmin", format!("{:?}", f.fmin));
        c.set("features.fmax", format!("{:?}", f.fmax));
        c.set("features.norm", f.norm);
        c.tensors = model.params.clone();
        c
    }

    pub fn to_classifier(&self) -> Result<ClassifierModel> {
        self.expect_kind(&[ModelKind::Classifier])?;
        let features = FeatureConfig {
            framing: self.framing()?,
            n_mels: self.parse("features.n_mels")?,
            fmin: self.parse("features.fmin")?,
            fmax: self.parse("features.fmax")?,
            norm: self.parse("features.norm")?,
        };
        let inventory: PhonemeInventory = self.parse("spec.inventory")?;
        ClassifierModel::from_parts(
            self.tensors.clone(),
            stack_from_str(self.get("spec.layers")?)?,
            inventory,
            features,
            self.parse("spec.frozen")?,
        )
    }

    pub fn from_synth(model: &SynthModel, seed: u64) -> Self {
        let (kind, spec, framing, scale, params) = match model {
            SynthModel::Cvae(m) => (
                if m.has_flow() { ModelKind::SynthFlow } else { ModelKind::Synth },
                m.spec.to_string(),
                m.framing,
                m.mag_scale,
                &m.params,
            ),
            SynthModel::Baseline(b) => (ModelKind::Baseline, b.spec.to_string(), b.framing, b.mag_scale, &b.params),
        };
        let mut c = Self::new(kind, seed);
        c.set("spec.model", spec);
        c.set("spec.mag_scale", format!("{scale:?}"));
        c.set_framing(&framing);
        c.tensors = params.clone();
        c
    }

    pub fn to_synth(&self) -> Result<SynthModel> {
        self.expect_kind(&[ModelKind::Synth, ModelKind::SynthFlow, ModelKind::Baseline])?;
        let framing = self.framing()?;
        let scale: f64 = self.parse("spec.mag_scale")?;
        let params = self.tensors.clone();
        Ok(match self.kind {
            ModelKind::Baseline => {
                let spec: BaselineSpec = self.parse("spec.model")?;
                SynthModel::Baseline(BaselineModel::from_parts(params, spec, framing, scale)?)
            }
            _ => {
                let spec: SynthSpec = self.parse("spec.model")?;
                if (self.kind == ModelKind::SynthFlow) != (spec.flow_steps > 0) {
                    return Err(Error::Malformed("kind tag disagrees with the flow step count".into()));
                }
                SynthModel::Cvae(SynthesizerModel::from_parts(params, spec, framing, scale)?)
            }
        })
    }

    pub fn from_spectrogram(s: &LinSpectrogram, seed: u64) -> Self {
        let mut c = Self::new(ModelKind::Spectrogram, seed);
        c.set_framing(&s.framing);
        c.tensors.insert(
            "mags",
            Tensor::matrix(s.frames, s.bins(), s.mags.iter().map(|&v| v as f32).collect()),
        );
        c
    }

    /// The stored spectrogram, at the 32-bit precision it was saved with.
    pub fn to_spectrogram(&self) -> Result<LinSpectrogram> {
        self.expect_kind(&[ModelKind::Spectrogram])?;
        let t = self.tensors.get("mags")?;
        let [frames, _] = t.shape()[..] else {
            return Err(Error::Malformed(format!("spectrogram tensor has shape {:?}", t.shape())));
        };
        LinSpectrogram::new(t.data().iter().map(|&v| v as f64).collect(), frames, self.framing()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(ModelKind::Synth, 9);
        c.set("spec.model", "x");
        c.tensors.insert("a", Tensor::matrix(2, 2, vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE]));
        c.tensors.insert("b", Tensor::row(vec![7.0]));
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let d = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(c, d);
        assert_eq!(bytes, d.to_bytes().unwrap());
    }

    #[test]
    fn corruption_is_typed() {
        let mut bytes = sample().to_bytes().unwrap();
        let good = bytes.clone();
        bytes[0] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic)));
        let mut bytes = good.clone();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        for cut in [4, 13, good.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&good[..cut]), Err(Error::Truncated(_)) | Err(Error::BadMagic)));
        }
        assert!(matches!(Checkpoint::from_bytes(&good[..good.len() - 1]), Err(Error::Truncated(_))));
    }

    #[test]
    fn reserved_and_multiline_header_rejected() {
        let mut c = sample();
        c.set("note", "two\nlines");
        assert!(c.to_bytes().is_err());
        let mut c = sample();
        c.set("kind", "classifier");
        assert!(c.to_bytes().is_err());
    }
}
