use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{GaussianPosterior, LatentVector, NoiseVector};
use crate::error::{invalid, shape_err, Error, Result};
use crate::flow::{flow_graph, flow_steps, iaf_chain, init_flow};
use crate::neural::{Activation, Dense, Graph, Gru, NetworkParams, Real, Tensor, Var};
use crate::phoneme::LinguisticFeatures;
use crate::signal::{Framing, LinSpectrogram};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LATENT_DIM: usize = 16;

/// Shape of a CVAE synthesizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub bins: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub flow_steps: usize,
}

impl SynthSpec {
    pub fn encoder_rnn(&self) -> Gru {
        Gru::new("enc.rnn", self.bins + self.classes, self.hidden)
    }

    pub fn encoder_head(&self) -> Dense {
        Dense::new("enc.head", self.hidden, 2 * self.latent_dim, Activation::Linear)
    }

    pub fn decoder_rnn(&self) -> Gru {
        Gru::new("dec.rnn", self.classes + self.latent_dim, self.hidden)
    }

    pub fn decoder_out(&self) -> Dense {
        Dense::new("dec.out", self.hidden, self.bins, Activation::Linear)
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cvae classes={} bins={} hidden={} latent={} flow={}",
            self.classes, self.bins, self.hidden, self.latent_dim, self.flow_steps
        )
    }
}

/// Parses `key=value` tokens after a leading tag.
pub(crate) fn parse_fields<'a>(s: &'a str, tag: &str) -> Result<Vec<(&'a str, usize)>> {
    let mut it = s.split_whitespace();
    if it.next() != Some(tag) {
        return Err(invalid(format!("expected `{tag}` spec, got `{s}`")));
    }
    it.map(|tok| {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| invalid(format!("bad spec token `{tok}`")))?;
        let v = v
            .parse()
            .map_err(|_| invalid(format!("bad number in spec token `{tok}`")))?;
        Ok((k, v))
    })
    .collect()
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SynthSpec {
            classes: 0,
            bins: 0,
            hidden: DEFAULT_HIDDEN,
            latent_dim: DEFAULT_LATENT_DIM,
            flow_steps: 0,
        };
        for (k, v) in parse_fields(s, "cvae")? {
            match k {
                "classes" => spec.classes = v,
                "bins" => spec.bins = v,
                "hidden" => spec.hidden = v,
                "latent" => spec.latent_dim = v,
                "flow" => spec.flow_steps = v,
                _ => return Err(invalid(format!("unknown cvae spec key `{k}`"))),
            }
        }
        if spec.classes < 2 || spec.bins == 0 || spec.hidden == 0 || spec.latent_dim == 0 {
            return Err(invalid(format!("incomplete cvae spec `{s}`")));
        }
        Ok(spec)
    }
}

/// Encoder and decoder weights with the magnitude scaling used in training.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizerModel<T: Real = f32> {
    pub params: NetworkParams<T>,
    pub spec: SynthSpec,
    pub framing: Framing,
    /// Raw magnitudes are multiplied by this before entering the network.
    pub mag_scale: f64,
}

impl<T: Real> SynthesizerModel<T> {
    pub fn new<R: Rng>(spec: SynthSpec, framing: Framing, mag_scale: f64, rng: &mut R) -> Result<Self> {
        if spec.bins != framing.bins() {
            return Err(shape_err("synthesizer bins", framing.bins(), spec.bins));
        }
        let mut params = NetworkParams::new();
        spec.encoder_rnn().init(rng, &mut params);
        spec.encoder_head().init(rng, &mut params);
        // near-zero head: the initial posterior is close to N(0, I) and KL ≈ 0
        if let Some(w) = params.get_mut("enc.head.w") {
            w.data_mut().iter_mut().for_each(|v| *v = *v * T::of(0.01));
        }
        spec.decoder_rnn().init(rng, &mut params);
        spec.decoder_out().init(rng, &mut params);
        for (k, v) in init_flow::<T, R>(spec.latent_dim, spec.flow_steps, rng).iter() {
            params.insert(k.clone(), v.clone());
        }
        Self::from_parts(params, spec, framing, mag_scale)
    }

    pub fn from_parts(params: NetworkParams<T>, spec: SynthSpec, framing: Framing, mag_scale: f64) -> Result<Self> {
        if spec.bins != framing.bins() {
            return Err(shape_err("synthesizer bins", framing.bins(), spec.bins));
        }
        if !(mag_scale.is_finite() && mag_scale > 0.0) {
            return Err(invalid("magnitude scale must be positive"));
        }
        let expect = |name: String, shape: &[usize]| -> Result<()> {
            let t = params.get(&name)?;
            if t.shape() != shape {
                return Err(shape_err(&name, format!("{shape:?}"), format!("{:?}", t.shape())));
            }
            Ok(())
        };
        let h3 = 3 * spec.hidden;
        for (g, input) in [
            (spec.encoder_rnn(), spec.bins + spec.classes),
            (spec.decoder_rnn(), spec.classes + spec.latent_dim),
        ] {
            expect(format!("{}.w_ih", g.name), &[input, h3])?;
            expect(format!("{}.w_hh", g.name), &[spec.hidden, h3])?;
        }
        expect("enc.head.w".into(), &[spec.hidden, 2 * spec.latent_dim])?;
        expect("dec.out.w".into(), &[spec.hidden, spec.bins])?;
        flow_steps(&params, spec.latent_dim, spec.flow_steps)?;
        Ok(Self {
            params,
            spec,
            framing,
            mag_scale,
        })
    }

    pub fn cast<U: Real>(&self) -> SynthesizerModel<U> {
        SynthesizerModel {
            params: self.params.cast(),
            spec: self.spec,
            framing: self.framing,
            mag_scale: self.mag_scale,
        }
    }

    pub fn has_flow(&self) -> bool {
        self.spec.flow_steps > 0
    }

    fn check_condition(&self, c: &LinguisticFeatures) -> Result<()> {
        if c.classes != self.spec.classes {
            return Err(shape_err("synthesizer condition", self.spec.classes, c.classes));
        }
        Ok(())
    }

    /// Network-domain input tensor for a raw spectrogram.
    pub fn scaled_input(&self, x: &LinSpectrogram) -> Tensor<T> {
        Tensor::matrix(
            x.frames,
            x.bins(),
            x.mags.iter().map(|&v| T::of(v * self.mag_scale)).collect(),
        )
    }

    /// Utterance posterior from a spectrogram and its condition.
    pub fn encode(&self, x: &LinSpectrogram, c: &LinguisticFeatures) -> Result<GaussianPosterior> {
        self.check_condition(c)?;
        if x.frames != c.frames {
            return Err(shape_err("encode frames", x.frames, c.frames));
        }
        if x.bins() != self.spec.bins {
            return Err(shape_err("encode bins", self.spec.bins, x.bins()));
        }
        let mut g = Graph::new();
        let xv = g.constant(self.scaled_input(x));
        let cv = g.constant(c.to_tensor());
        let (mu, lv) = encoder_graph(&mut g, &self.params, &self.spec, xv, cv)?;
        let mu = g.value(mu).data().iter().map(|v| v.f64()).collect();
        let lv: Vec<f64> = g.value(lv).data().iter().map(|v| v.f64()).collect();
        GaussianPosterior::from_log_var(mu, &lv)
    }

    /// Spectrogram in raw magnitude units, clamped at zero.
    pub fn decode(&self, z: &LatentVector, c: &LinguisticFeatures) -> Result<LinSpectrogram> {
        self.check_condition(c)?;
        if z.len() != self.spec.latent_dim {
            return Err(shape_err("decode latent", self.spec.latent_dim, z.len()));
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::row(z.0.iter().map(|&v| T::of(v)).collect()));
        let cv = g.constant(c.to_tensor());
        let y = decoder_graph(&mut g, &self.params, &self.spec, zv, cv)?;
        let mags = g
            .value(y)
            .data()
            .iter()
            .map(|v| (v.f64() / self.mag_scale).max(0.0))
            .collect();
        LinSpectrogram::new(mags, c.frames, self.framing)
    }

    /// Inference latent for a prior draw: `eps` itself, or `eps` pushed
    /// through the flow steps when the model has them.
    pub fn latent_from_noise(&self, eps: &NoiseVector) -> Result<LatentVector> {
        if eps.len() != self.spec.latent_dim {
            return Err(shape_err("noise", self.spec.latent_dim, eps.len()));
        }
        if !self.has_flow() {
            return Ok(LatentVector(eps.0.clone()));
        }
        let steps = flow_steps(&self.params, self.spec.latent_dim, self.spec.flow_steps)?;
        let trace = iaf_chain(&GaussianPosterior::standard(self.spec.latent_dim), eps, &steps)?;
        Ok(trace.z_final().clone())
    }
}

/// `(mu, log_var)`, each `1 × D_z`, from `x` (`T × bins`, network domain) and `c` (`T × K`).
pub fn encoder_graph<T: Real>(
    g: &mut Graph<T>,
    params: &NetworkParams<T>,
    spec: &SynthSpec,
    x: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let xc = g.concat(&[x, c])?;
    let (_, last) = spec.encoder_rnn().apply(g, params, xc, None, false)?;
    let head = spec.encoder_head().apply(g, params, last)?;
    let mu = g.slice_cols(head, 0, spec.latent_dim)?;
    let lv = g.slice_cols(head, spec.latent_dim, spec.latent_dim)?;
    Ok((mu, lv))
}

/// `T × bins` network-domain output from `z` (`1 × D_z`) and `c` (`T × K`).
pub fn decoder_graph<T: Real>(
    g: &mut Graph<T>,
    params: &NetworkParams<T>,
    spec: &SynthSpec,
    z: Var,
    c: Var,
) -> Result<Var> {
    let (frames, _) = g.shape(c);
    let zb = g.broadcast_rows(z, frames)?;
    let cz = g.concat(&[c, zb])?;
    let (h, _) = spec.decoder_rnn().apply(g, params, cz, None, false)?;
    spec.decoder_out().apply(g, params, h)
}

/// Scalar loss nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub output: Var,
}

/// Full training objective for one utterance and one noise draw.
///
/// Without flow steps the KL term is the closed form; with them it is the
/// single-draw estimate `½(‖z_T‖² − ‖eps‖²) − Σ log σ`.
pub fn loss_graph<T: Real>(
    g: &mut Graph<T>,
    params: &NetworkParams<T>,
    spec: &SynthSpec,
    x: Var,
    c: Var,
    eps: &[f64],
    beta: f64,
) -> Result<LossVars> {
    if eps.len() != spec.latent_dim {
        return Err(shape_err("loss noise", spec.latent_dim, eps.len()));
    }
    let (mu, lv) = encoder_graph(g, params, spec, x, c)?;
    let half_lv = g.scale(lv, 0.5);
    let sigma = g.exp(half_lv);
    let e = g.constant(Tensor::row(eps.iter().map(|&v| T::of(v)).collect()));
    let se = g.mul(sigma, e)?;
    let z0 = g.add(mu, se)?;
    let sum_half_lv = g.sum(half_lv);
    let (z, kl) = if spec.flow_steps > 0 {
        let (zt, ls) = flow_graph(g, params, z0, spec.flow_steps)?;
        let zz = g.square(zt);
        let zz = g.sum(zz);
        let ee: f64 = eps.iter().map(|v| v * v).sum();
        let quad = g.add_scalar(zz, -ee);
        let quad = g.scale(quad, 0.5);
        let mut log_sigma = sum_half_lv;
        if let Some(ls) = ls {
            log_sigma = g.add(log_sigma, ls)?;
        }
        (zt, g.sub(quad, log_sigma)?)
    } else {
        let mu2 = g.square(mu);
        let s2 = g.square(sigma);
        let a = g.add(mu2, s2)?;
        let a = g.sum(a);
        let a = g.scale(a, 0.5);
        let a = g.add_scalar(a, -0.5 * spec.latent_dim as f64);
        (z0, g.sub(a, sum_half_lv)?)
    };
    let y = decoder_graph(g, params, spec, z, c)?;
    let d = g.sub(y, x)?;
    let d2 = g.square(d);
    let recon = g.mean(d2);
    let bkl = g.scale(kl, beta);
    let total = g.add(recon, bkl)?;
    Ok(LossVars {
        total,
        recon,
        kl,
        output: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{cvae_loss, kl_divergence, reparameterize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_framing() -> Framing {
        Framing {
            frame_len: 16,
            hop: 8,
            n_fft: 16,
            sample_rate: 16000,
        }
    }

    fn small_spec(flow: usize) -> SynthSpec {
        SynthSpec {
            classes: 3,
            bins: 9,
            hidden: 5,
            latent_dim: 4,
            flow_steps: flow,
        }
    }

    fn condition(frames: usize, rng: &mut ChaCha8Rng) -> LinguisticFeatures {
        let mut probs = Vec::new();
        for _ in 0..frames {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = r.iter().sum();
            probs.extend(r.iter().map(|v| v / s));
        }
        LinguisticFeatures::new(probs, frames, 3).unwrap()
    }

    fn spectrogram(frames: usize, rng: &mut ChaCha8Rng) -> LinSpectrogram {
        LinSpectrogram::new((0..frames * 9).map(|_| rng.random_range(0.0..2.0)).collect(), frames, small_framing())
            .unwrap()
    }

    #[test]
    fn spec_text_round_trip() {
        let s = small_spec(4);
        assert_eq!(s.to_string().parse::<SynthSpec>().unwrap(), s);
        assert!("cvae classes=3".parse::<SynthSpec>().is_err());
        assert!("baseline classes=3 bins=9".parse::<SynthSpec>().is_err());
    }

    #[test]
    fn zero_encoder_gives_standard_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = SynthesizerModel::<f64>::new(small_spec(0), small_framing(), 1.0, &mut rng).unwrap();
        for (name, t) in m.params.iter_mut() {
            if name.starts_with("enc.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let c = condition(6, &mut rng);
        let x = spectrogram(6, &mut rng);
        let p = m.encode(&x, &c).unwrap();
        assert_eq!(p, GaussianPosterior::standard(4));
        assert_eq!(p, m.encode(&x, &c).unwrap());
    }

    #[test]
    fn decode_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = SynthesizerModel::<f32>::new(small_spec(0), small_framing(), 0.5, &mut rng).unwrap();
        let c = condition(7, &mut rng);
        let z = LatentVector(vec![0.3, -1.0, 2.0, 0.0]);
        let s = m.decode(&z, &c).unwrap();
        assert_eq!(s.frames, 7);
        assert!(s.mags.iter().all(|&v| v >= 0.0));
        assert_eq!(s, m.decode(&z, &c).unwrap());
        assert!(m.decode(&LatentVector(vec![0.0; 3]), &c).is_err());
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SynthesizerModel::<f64>::new(small_spec(0), small_framing(), 0.7, &mut rng).unwrap();
        let c = condition(5, &mut rng);
        let x = spectrogram(5, &mut rng);
        let eps = NoiseVector(vec![0.5, -0.2, 1.1, 0.0]);
        let mut g = Graph::new();
        let xv = g.constant(m.scaled_input(&x));
        let cv = g.constant(c.to_tensor());
        let lv = loss_graph(&mut g, &m.params, &m.spec, xv, cv, &eps.0, 1.0).unwrap();

        let post = m.encode(&x, &c).unwrap();
        let z = reparameterize(&post, &eps).unwrap();
        let xh = m.decode(&z, &c).unwrap();
        assert!((g.value(lv.kl).data()[0] - kl_divergence(&post)).abs() < 1e-12);
        // clamping can only move the decoded output toward x where x ≥ 0
        let unclamped: Vec<f64> = g.value(lv.output).data().iter().map(|v| v / 0.7).collect();
        let raw = LinSpectrogram {
            mags: unclamped,
            frames: 5,
            framing: small_framing(),
        };
        let plain = cvae_loss(&x, &raw, &post, 1.0).unwrap();
        assert!((g.value(lv.recon).data()[0] - plain.recon * 0.49).abs() < 1e-12);
        assert!(cvae_loss(&x, &xh, &post, 1.0).unwrap().recon <= plain.recon + 1e-12);
    }

    #[test]
    fn flow_variant_latent_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = SynthesizerModel::<f32>::new(small_spec(2), small_framing(), 1.0, &mut rng).unwrap();
        let eps = NoiseVector(vec![0.1, 0.2, 0.3, 0.4]);
        let a = m.latent_from_noise(&eps).unwrap();
        assert_eq!(a, m.latent_from_noise(&eps).unwrap());
        let plain = SynthesizerModel::<f32>::new(small_spec(0), small_framing(), 1.0, &mut rng).unwrap();
        assert_eq!(plain.latent_from_noise(&eps).unwrap().0, eps.0);
    }
}
