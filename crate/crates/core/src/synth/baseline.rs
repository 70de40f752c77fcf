use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::cvae::parse_fields;
use crate::error::{invalid, shape_err, Error, Result};
use crate::neural::{Activation, Conv1d, Dense, Graph, Gru, Highway, NetworkParams, Real, Var};
use crate::phoneme::LinguisticFeatures;
use crate::signal::{Framing, LinSpectrogram};

/// Shape of the CBHG-lite baseline: `blocks` stacked blocks, then a dense
/// projection to `bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineSpec {
    pub classes: usize,
    pub bins: usize,
    /// Conv bank kernel widths run `1..=bank`.
    pub bank: usize,
    pub channels: usize,
    pub proj: usize,
    pub highway: usize,
    pub width: usize,
    /// Units per direction of the bidirectional GRU.
    pub gru: usize,
    pub blocks: usize,
}

impl BaselineSpec {
    pub fn new(classes: usize, bins: usize) -> Self {
        Self {
            classes,
            bins,
            bank: 4,
            channels: 32,
            proj: 64,
            highway: 2,
            width: 64,
            gru: 64,
            blocks: 2,
        }
    }

    fn block_input(&self, b: usize) -> usize {
        if b == 0 {
            self.classes
        } else {
            2 * self.gru
        }
    }

    fn out(&self) -> Dense {
        Dense::new("bl.out", 2 * self.gru, self.bins, Activation::Linear)
    }

    fn block(&self, b: usize) -> Block {
        let w_in = self.block_input(b);
        let p = format!("bl.{b}");
        Block {
            bank: (1..=self.bank)
                .map(|k| Conv1d::new(format!("{p}.bank{k}"), w_in, self.channels, k, Activation::Relu))
                .collect(),
            proj1: Conv1d::new(format!("{p}.proj1"), self.bank * self.channels, self.proj, 3, Activation::Relu),
            proj2: Conv1d::new(format!("{p}.proj2"), self.proj, w_in, 3, Activation::Linear),
            pre: Dense::new(format!("{p}.pre"), w_in, self.width, Activation::Linear),
            highways: (0..self.highway)
                .map(|i| Highway::new(format!("{p}.hw{i}"), self.width))
                .collect(),
            fwd: Gru::new(format!("{p}.fwd"), self.width, self.gru),
            bwd: Gru::new(format!("{p}.bwd"), self.width, self.gru),
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cbhg classes={} bins={} bank={} channels={} proj={} highway={} width={} gru={} blocks={}",
            self.classes,
            self.bins,
            self.bank,
            self.channels,
            self.proj,
            self.highway,
            self.width,
            self.gru,
            self.blocks
        )
    }
}

impl FromStr for BaselineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = BaselineSpec::new(0, 0);
        for (k, v) in parse_fields(s, "cbhg")? {
            let slot = match k {
                "classes" => &mut spec.classes,
                "bins" => &mut spec.bins,
                "bank" => &mut spec.bank,
                "channels" => &mut spec.channels,
                "proj" => &mut spec.proj,
                "highway" => &mut spec.highway,
                "width" => &mut spec.width,
                "gru" => &mut spec.gru,
                "blocks" => &mut spec.blocks,
                _ => return Err(invalid(format!("unknown cbhg spec key `{k}`"))),
            };
            *slot = v;
        }
        let sizes = [spec.bins, spec.bank, spec.channels, spec.proj, spec.width, spec.gru, spec.blocks];
        if spec.classes < 2 || sizes.contains(&0) {
            return Err(invalid(format!("incomplete cbhg spec `{s}`")));
        }
        Ok(spec)
    }
}

struct Block {
    bank: Vec<Conv1d>,
    proj1: Conv1d,
    proj2: Conv1d,
    pre: Dense,
    highways: Vec<Highway>,
    fwd: Gru,
    bwd: Gru,
}

impl Block {
    fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        for c in &self.bank {
            c.init(rng, p);
        }
        self.proj1.init(rng, p);
        self.proj2.init(rng, p);
        self.pre.init(rng, p);
        for h in &self.highways {
            h.init(rng, p);
        }
        self.fwd.init(rng, p);
        self.bwd.init(rng, p);
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, p: &NetworkParams<T>, x: Var) -> Result<Var> {
        let bank = self
            .bank
            .iter()
            .map(|c| c.apply(g, p, x))
            .collect::<Result<Vec<_>>>()?;
        let h = g.concat(&bank)?;
        let h = g.max_pool1d(h, 2)?;
        let h = self.proj1.apply(g, p, h)?;
        let h = self.proj2.apply(g, p, h)?;
        let h = g.add(h, x)?;
        let mut h = self.pre.apply(g, p, h)?;
        for hw in &self.highways {
            h = hw.apply(g, p, h)?;
        }
        let (f, _) = self.fwd.apply(g, p, h, None, false)?;
        let (b, _) = self.bwd.apply(g, p, h, None, true)?;
        g.concat(&[f, b])
    }
}

/// `T × bins` network-domain output from a `T × K` condition.
pub fn baseline_graph<T: Real>(g: &mut Graph<T>, params: &NetworkParams<T>, spec: &BaselineSpec, c: Var) -> Result<Var> {
    let (_, k) = g.shape(c);
    if k != spec.classes {
        return Err(shape_err("baseline condition", spec.classes, k));
    }
    let mut h = c;
    for b in 0..spec.blocks {
        h = spec.block(b).apply(g, params, h)?;
    }
    spec.out().apply(g, params, h)
}

/// Deterministic condition → spectrogram model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel<T: Real = f32> {
    pub params: NetworkParams<T>,
    pub spec: BaselineSpec,
    pub framing: Framing,
    pub mag_scale: f64,
}

impl<T: Real> BaselineModel<T> {
    pub fn new<R: Rng>(spec: BaselineSpec, framing: Framing, mag_scale: f64, rng: &mut R) -> Result<Self> {
        let mut params = NetworkParams::new();
        for b in 0..spec.blocks {
            spec.block(b).init(rng, &mut params);
        }
        spec.out().init(rng, &mut params);
        Self::from_parts(params, spec, framing, mag_scale)
    }

    pub fn from_parts(params: NetworkParams<T>, spec: BaselineSpec, framing: Framing, mag_scale: f64) -> Result<Self> {
        if spec.bins != framing.bins() {
            return Err(shape_err("baseline bins", framing.bins(), spec.bins));
        }
        if !(mag_scale.is_finite() && mag_scale > 0.0) {
            return Err(invalid("magnitude scale must be positive"));
        }
        let w = params.get("bl.out.w")?;
        if w.shape() != [2 * spec.gru, spec.bins] {
            return Err(shape_err("bl.out.w", format!("[{}, {}]", 2 * spec.gru, spec.bins), format!("{:?}", w.shape())));
        }
        for b in 0..spec.blocks {
            params.get(&format!("bl.{b}.fwd.w_ih"))?;
        }
        Ok(Self {
            params,
            spec,
            framing,
            mag_scale,
        })
    }

    pub fn cast<U: Real>(&self) -> BaselineModel<U> {
        BaselineModel {
            params: self.params.cast(),
            spec: self.spec,
            framing: self.framing,
            mag_scale: self.mag_scale,
        }
    }

    pub fn synthesize(&self, c: &LinguisticFeatures) -> Result<LinSpectrogram> {
        baseline_synthesize(self, c)
    }
}

/// Raw magnitudes, clamped at zero.
pub fn baseline_synthesize<T: Real>(model: &BaselineModel<T>, c: &LinguisticFeatures) -> Result<LinSpectrogram> {
    let mut g = Graph::new();
    let cv = g.constant(c.to_tensor());
    let y = baseline_graph(&mut g, &model.params, &model.spec, cv)?;
    let mags = g
        .value(y)
        .data()
        .iter()
        .map(|v| (v.f64() / model.mag_scale).max(0.0))
        .collect();
    LinSpectrogram::new(mags, c.frames, model.framing)
}
