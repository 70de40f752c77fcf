#![allow(dead_code)]

pub mod grad_cases;

use cvae_vc::neural::{Graph, NetworkParams, Tensor, Var};
use cvae_vc::signal::Framing;
use cvae_vc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Small framing whose spectra have 5 bins.
pub fn tiny_framing() -> Framing {
    Framing {
        frame_len: 8,
        hop: 4,
        n_fft: 8,
        sample_rate: 16000,
    }
}

/// Adds uniform noise to every parameter so no test starts at a special point.
pub fn jitter(params: &mut NetworkParams<f64>, rng: &mut impl Rng, scale: f64) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Entries sitting on a kink (relu, clamp, max): the analytic value
    /// matches one one-sided difference but not the central one.
    pub kinks: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Central-difference check of `d loss / d params`. Checks up to
/// `per_tensor` randomly chosen entries of every tensor.
pub fn grad_check(
    params: &NetworkParams<f64>,
    build: &dyn Fn(&mut Graph<f64>, &NetworkParams<f64>) -> Result<Var>,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> GradReport {
    let eval = |p: &NetworkParams<f64>| -> f64 {
        let mut g = Graph::new();
        let l = build(&mut g, p).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let loss = build(&mut g, params).unwrap();
    assert_eq!(g.shape(loss), (1, 1), "loss must be scalar");
    let grads = g.gradients_for(loss, params).unwrap();
    let f0 = eval(params);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-5);
    let mut report = GradReport::default();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let mut p = params.clone();
            let x = p.get(&name).unwrap().data()[i];
            p.get_mut(&name).unwrap().data_mut()[i] = x + FD_STEP;
            let fp = eval(&p);
            p.get_mut(&name).unwrap().data_mut()[i] = x - FD_STEP;
            let fm = eval(&p);
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let analytic = grads.get(&name).unwrap().data()[i];
            let e = rel(analytic, numeric);
            if e >= FD_TOLERANCE {
                let fwd = (fp - f0) / FD_STEP;
                let bwd = (f0 - fm) / FD_STEP;
                if rel(analytic, fwd) < 1e-3 || rel(analytic, bwd) < 1e-3 {
                    report.kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_at = format!("{name}[{i}]");
            }
        }
    }
    report
}

/// `Σ out ⊙ r` with a fixed random `r`, turning any output into a scalar
/// whose gradient reaches every output entry.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let w = g.constant(random_tensor(&mut rng(seed ^ 0x5eed), r, c, 1.0));
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

/// `KL(N(mu, sigma²) ‖ N(0, 1))` by composite Simpson over `mu ± 14 sigma`.
pub fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
    let log_p = |x: f64| -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_q = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| log_p(x).exp() * (log_p(x) - log_q(x));
    let (a, b, n) = (mu - 14.0 * sigma, mu + 14.0 * sigma, 20_000);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Row-major `∂f_i/∂x_j` by central differences.
pub fn numerical_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let (mut up, mut down) = (x.to_vec(), x.to_vec());
        up[j] += h;
        down[j] -= h;
        let (fu, fd) = (f(&up), f(&down));
        for i in 0..n {
            jac[i][j] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    jac
}

/// `log|det a|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        acc += pivot.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / pivot;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

pub fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Mean and standard error of the mean.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
