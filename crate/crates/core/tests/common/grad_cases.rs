//! Every layer type and every training loss as a seeded gradient check.

use cvae_vc::neural::{
    apply_stack, init_stack, Activation, Conv1d, Dense, Graph, Gru, Highway, LayerSpec, NetworkParams, Tensor, Var,
};
use cvae_vc::phoneme::classifier_stack;
use cvae_vc::synth::{baseline_graph, loss_graph, BaselineModel, BaselineSpec, SynthSpec, SynthesizerModel};
use cvae_vc::Result;
use rand::Rng;

use super::{grad_check, jitter, project, random_tensor, rng, tiny_framing, GradReport};

pub const SEEDS: u64 = 20;

pub struct GradCase {
    pub name: String,
    pub run: Box<dyn Fn(u64) -> GradReport + Sync>,
}

fn case(name: impl Into<String>, run: impl Fn(u64) -> GradReport + Sync + 'static) -> GradCase {
    GradCase {
        name: name.into(),
        run: Box::new(run),
    }
}

fn stack_case(name: &str, stack: Vec<LayerSpec>, rows: usize, cols: usize) -> GradCase {
    case(name, move |seed| {
        let mut rng = rng(seed);
        let mut params: NetworkParams<f64> = init_stack(&stack, &mut rng);
        jitter(&mut params, &mut rng, 0.1);
        let x = random_tensor(&mut rng, rows, cols, 1.0);
        let build = |g: &mut Graph<f64>, p: &NetworkParams<f64>| -> Result<Var> {
            let xv = g.constant(x.clone());
            let (out, _) = apply_stack(g, p, &stack, xv, None)?;
            project(g, out, seed)
        };
        grad_check(&params, &build, 12, &mut rng)
    })
}

fn gru_case(reverse: bool) -> GradCase {
    let name = if reverse { "gru reverse" } else { "gru forward" };
    case(name, move |seed| {
        let gru = Gru::new("r", 3, 4);
        let mut rng = rng(seed);
        let mut params = NetworkParams::<f64>::new();
        gru.init(&mut rng, &mut params);
        jitter(&mut params, &mut rng, 0.1);
        let x = random_tensor(&mut rng, 6, 3, 1.0);
        let h0 = random_tensor(&mut rng, 1, 4, 0.5);
        let build = |g: &mut Graph<f64>, p: &NetworkParams<f64>| -> Result<Var> {
            let xv = g.constant(x.clone());
            let hv = g.constant(h0.clone());
            let (all, last) = gru.apply(g, p, xv, Some(hv), reverse)?;
            let a = project(g, all, seed)?;
            let b = project(g, last, seed + 1)?;
            g.add(a, b)
        };
        grad_check(&params, &build, 12, &mut rng)
    })
}

fn cross_entropy_case() -> GradCase {
    case("classifier cross entropy", |seed| {
        let stack = classifier_stack(5, 6, 4);
        let mut rng = rng(seed);
        let mut params: NetworkParams<f64> = init_stack(&stack, &mut rng);
        jitter(&mut params, &mut rng, 0.1);
        let x = random_tensor(&mut rng, 6, 5, 1.0);
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let build = |g: &mut Graph<f64>, p: &NetworkParams<f64>| -> Result<Var> {
            let xv = g.constant(x.clone());
            let (probs, _) = apply_stack(g, p, &stack, xv, None)?;
            g.cross_entropy(probs, &labels)
        };
        grad_check(&params, &build, 12, &mut rng)
    })
}

fn simplex_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut v = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let r: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = r.iter().sum();
        v.extend(r.iter().map(|x| x / s));
    }
    Tensor::matrix(rows, cols, v)
}

fn cvae_case(flow_steps: usize, which: &'static str) -> GradCase {
    let name = if flow_steps == 0 {
        format!("cvae loss {which}")
    } else {
        format!("iaf loss ({flow_steps} steps) {which}")
    };
    case(name, move |seed| {
        let spec = SynthSpec {
            classes: 3,
            bins: 5,
            hidden: 4,
            latent_dim: 3,
            flow_steps,
        };
        let mut rng = rng(seed);
        let mut params = SynthesizerModel::<f64>::new(spec, tiny_framing(), 1.0, &mut rng)
            .unwrap()
            .params;
        jitter(&mut params, &mut rng, 0.2);
        let x = Tensor::matrix(6, 5, (0..30).map(|_| rng.random_range(0.0..2.0)).collect());
        let c = simplex_rows(&mut rng, 6, 3);
        let eps: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let build = |g: &mut Graph<f64>, p: &NetworkParams<f64>| -> Result<Var> {
            let xv = g.constant(x.clone());
            let cv = g.constant(c.clone());
            let l = loss_graph(g, p, &spec, xv, cv, &eps, 1.0)?;
            Ok(match which {
                "total" => l.total,
                "recon" => l.recon,
                _ => l.kl,
            })
        };
        grad_check(&params, &build, 10, &mut rng)
    })
}

fn baseline_case() -> GradCase {
    case("baseline recon", |seed| {
        let spec = BaselineSpec {
            classes: 3,
            bins: 5,
            bank: 2,
            channels: 3,
            proj: 4,
            highway: 1,
            width: 4,
            gru: 3,
            blocks: 2,
        };
        let mut rng = rng(seed);
        let mut params = BaselineModel::<f64>::new(spec, tiny_framing(), 1.0, &mut rng).unwrap().params;
        jitter(&mut params, &mut rng, 0.1);
        let x = Tensor::matrix(7, 5, (0..35).map(|_| rng.random_range(0.0..2.0)).collect());
        let c = simplex_rows(&mut rng, 7, 3);
        let build = |g: &mut Graph<f64>, p: &NetworkParams<f64>| -> Result<Var> {
            let cv = g.constant(c.clone());
            let xv = g.constant(x.clone());
            let y = baseline_graph(g, p, &spec, cv)?;
            let d = g.sub(y, xv)?;
            let d2 = g.square(d);
            Ok(g.mean(d2))
        };
        grad_check(&params, &build, 6, &mut rng)
    })
}

pub fn all() -> Vec<GradCase> {
    let mut v: Vec<GradCase> = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid]
        .into_iter()
        .map(|act| stack_case(&format!("dense {act}"), vec![LayerSpec::Dense(Dense::new("d", 3, 4, act))], 5, 3))
        .collect();
    v.push(gru_case(false));
    v.push(gru_case(true));
    v.push(stack_case(
        "conv linear",
        vec![LayerSpec::Conv1d(Conv1d::new("c", 3, 4, 3, Activation::Linear))],
        7,
        3,
    ));
    v.push(stack_case(
        "conv even kernel",
        vec![LayerSpec::Conv1d(Conv1d::new("c", 3, 2, 4, Activation::Tanh))],
        7,
        3,
    ));
    v.push(stack_case(
        "conv relu + max pool",
        vec![
            LayerSpec::Conv1d(Conv1d::new("c", 3, 4, 2, Activation::Relu)),
            LayerSpec::MaxPool1d { width: 2 },
        ],
        7,
        3,
    ));
    v.push(stack_case("highway", vec![LayerSpec::Highway(Highway::new("h", 4))], 5, 4));
    v.push(stack_case("softmax", vec![LayerSpec::Dense(Dense::new("d", 3, 4, Activation::Linear)), LayerSpec::Softmax], 5, 3));
    v.push(cross_entropy_case());
    for which in ["total", "recon", "kl"] {
        v.push(cvae_case(0, which));
    }
    for which in ["total", "kl"] {
        v.push(cvae_case(2, which));
    }
    v.push(cvae_case(4, "total"));
    v.push(baseline_case());
    v
}

/// Passing means every checked entry is within tolerance and at most 10% of
/// entries sat on a kink.
pub fn passes(r: &GradReport) -> bool {
    r.checked > 0 && r.worst < super::FD_TOLERANCE && r.kinks * 10 <= r.checked
}
