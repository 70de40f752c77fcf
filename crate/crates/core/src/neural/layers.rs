use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{Graph, NetworkParams, Real, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => return Err(invalid(format!("unknown activation `{s}`"))),
        })
    }
}

/// Uniform Glorot initialisation in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-a..=a)))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Fully connected layer `act(x·W + b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            activation,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        p.insert(format!("{}.w", self.name), glorot(rng, self.input, self.output));
        p.insert(format!("{}.b", self.name), Tensor::zeros(&[self.output]));
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, p: &NetworkParams<T>, x: Var) -> Result<Var> {
        let (_, c) = g.shape(x);
        if c != self.input {
            return Err(shape_err(&self.name, format!("{} input features", self.input), c));
        }
        let w = g.param(p, &format!("{}.w", self.name))?;
        let b = g.param(p, &format!("{}.b", self.name))?;
        let y = g.matmul(x, w)?;
        let y = g.add_row(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// Gated recurrent unit.
///
/// `z = σ(x W_z + h U_z)`, `r = σ(x W_r + h U_r)`, `n = tanh(x W_n + r ⊙ (h U_n))`,
/// `h' = (1 − z) ⊙ n + z ⊙ h`, with biases on both projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gru {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        let h3 = 3 * self.hidden;
        p.insert(format!("{}.w_ih", self.name), glorot(rng, self.input, h3));
        p.insert(format!("{}.w_hh", self.name), glorot(rng, self.hidden, h3));
        p.insert(format!("{}.b_ih", self.name), Tensor::zeros(&[h3]));
        p.insert(format!("{}.b_hh", self.name), Tensor::zeros(&[h3]));
    }

    /// Runs the cell over every row of `x`. Returns the `T×H` outputs in time
    /// order and the final state (the state after the last consumed row).
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &NetworkParams<T>,
        x: Var,
        h0: Option<Var>,
        reverse: bool,
    ) -> Result<(Var, Var)> {
        let (steps, c) = g.shape(x);
        if c != self.input {
            return Err(shape_err(&self.name, format!("{} input features", self.input), c));
        }
        let hdim = self.hidden;
        let w_ih = g.param(p, &format!("{}.w_ih", self.name))?;
        let w_hh = g.param(p, &format!("{}.w_hh", self.name))?;
        let b_ih = g.param(p, &format!("{}.b_ih", self.name))?;
        let b_hh = g.param(p, &format!("{}.b_hh", self.name))?;
        let xp = g.matmul(x, w_ih)?;
        let xp = g.add_row(xp, b_ih)?;

        let mut h = match h0 {
            Some(h) => {
                if g.shape(h) != (1, hdim) {
                    return Err(shape_err(&self.name, format!("1x{hdim} state"), format!("{:?}", g.shape(h))));
                }
                h
            }
            None => g.constant(Tensor::zeros(&[1, hdim])),
        };
        let mut outs = Vec::with_capacity(steps);
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let xs = g.slice_rows(xp, t, 1)?;
            let hp = g.matmul(h, w_hh)?;
            let hp = g.add_row(hp, b_hh)?;
            let x_zr = g.slice_cols(xs, 0, 2 * hdim)?;
            let h_zr = g.slice_cols(hp, 0, 2 * hdim)?;
            let x_n = g.slice_cols(xs, 2 * hdim, hdim)?;
            let h_n = g.slice_cols(hp, 2 * hdim, hdim)?;
            let zr = g.add(x_zr, h_zr)?;
            let zr = g.sigmoid(zr);
            let z = g.slice_cols(zr, 0, hdim)?;
            let r = g.slice_cols(zr, hdim, hdim)?;
            let rh = g.mul(r, h_n)?;
            let n = g.add(x_n, rh)?;
            let n = g.tanh(n);
            let d = g.sub(h, n)?;
            let zd = g.mul(z, d)?;
            h = g.add(n, zd)?;
            outs.push(h);
        }
        if reverse {
            outs.reverse();
        }
        let all = g.concat_rows(&outs)?;
        Ok((all, h))
    }
}

/// Same-length 1-D convolution over time with bias and activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv1d {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, input: usize, output: usize, kernel: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            kernel,
            activation,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        p.insert(
            format!("{}.w", self.name),
            glorot(rng, self.kernel * self.input, self.output),
        );
        p.insert(format!("{}.b", self.name), Tensor::zeros(&[self.output]));
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, p: &NetworkParams<T>, x: Var) -> Result<Var> {
        let (_, c) = g.shape(x);
        if c != self.input {
            return Err(shape_err(&self.name, format!("{} channels", self.input), c));
        }
        let w = g.param(p, &format!("{}.w", self.name))?;
        let b = g.param(p, &format!("{}.b", self.name))?;
        let y = g.conv1d(x, w, self.kernel)?;
        let y = g.add_row(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// Highway layer `H ⊙ T + x ⊙ (1 − T)` with `H = relu(x W_h + b_h)`, `T = σ(x W_t + b_t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Highway {
    pub name: String,
    pub width: usize,
}

impl Highway {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Self {
            name: name.into(),
            width,
        }
    }

    fn parts(&self) -> (Dense, Dense) {
        (
            Dense::new(format!("{}.h", self.name), self.width, self.width, Activation::Relu),
            Dense::new(format!("{}.t", self.name), self.width, self.width, Activation::Sigmoid),
        )
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        let (h, t) = self.parts();
        h.init(rng, p);
        t.init(rng, p);
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, p: &NetworkParams<T>, x: Var) -> Result<Var> {
        let (h, t) = self.parts();
        let hv = h.apply(g, p, x)?;
        let tv = t.apply(g, p, x)?;
        // x + T ⊙ (H − x)
        let d = g.sub(hv, x)?;
        let td = g.mul(tv, d)?;
        g.add(x, td)
    }
}

/// One layer of a sequential stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense(Dense),
    Gru(Gru),
    Conv1d(Conv1d),
    MaxPool1d { width: usize },
    Highway(Highway),
    Softmax,
}

impl LayerSpec {
    pub fn init<T: Real, R: Rng>(&self, rng: &mut R, p: &mut NetworkParams<T>) {
        match self {
            LayerSpec::Dense(l) => l.init(rng, p),
            LayerSpec::Gru(l) => l.init(rng, p),
            LayerSpec::Conv1d(l) => l.init(rng, p),
            LayerSpec::Highway(l) => l.init(rng, p),
            LayerSpec::MaxPool1d { .. } | LayerSpec::Softmax => {}
        }
    }

    /// Feature width after this layer, given the incoming width.
    pub fn output_width(&self, input: usize) -> usize {
        match self {
            LayerSpec::Dense(l) => l.output,
            LayerSpec::Gru(l) => l.hidden,
            LayerSpec::Conv1d(l) => l.output,
            LayerSpec::Highway(l) => l.width,
            LayerSpec::MaxPool1d { .. } | LayerSpec::Softmax => input,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense(l) => write!(f, "dense {} {} {} {}", l.name, l.input, l.output, l.activation),
            LayerSpec::Gru(l) => write!(f, "gru {} {} {}", l.name, l.input, l.hidden),
            LayerSpec::Conv1d(l) => write!(
                f,
                "conv1d {} {} {} {} {}",
                l.name, l.input, l.output, l.kernel, l.activation
            ),
            LayerSpec::MaxPool1d { width } => write!(f, "maxpool {width}"),
            LayerSpec::Highway(l) => write!(f, "highway {} {}", l.name, l.width),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .ok_or_else(|| invalid(format!("layer `{s}`: missing field {i}")))?
                .parse()
                .map_err(|_| invalid(format!("layer `{s}`: bad number in field {i}")))
        };
        let name = |i: usize| -> Result<String> {
            parts
                .get(i)
                .map(|s| s.to_string())
                .ok_or_else(|| invalid(format!("layer `{s}`: missing name")))
        };
        let act = |i: usize| -> Result<Activation> {
            parts
                .get(i)
                .ok_or_else(|| invalid(format!("layer `{s}`: missing activation")))?
                .parse()
        };
        Ok(match parts.first().copied() {
            Some("dense") => LayerSpec::Dense(Dense::new(name(1)?, num(2)?, num(3)?, act(4)?)),
            Some("gru") => LayerSpec::Gru(Gru::new(name(1)?, num(2)?, num(3)?)),
            Some("conv1d") => LayerSpec::Conv1d(Conv1d::new(name(1)?, num(2)?, num(3)?, num(4)?, act(5)?)),
            Some("maxpool") => LayerSpec::MaxPool1d { width: num(1)? },
            Some("highway") => LayerSpec::Highway(Highway::new(name(1)?, num(2)?)),
            Some("softmax") => LayerSpec::Softmax,
            _ => return Err(invalid(format!("unknown layer `{s}`"))),
        })
    }
}

/// Renders a stack as `;`-separated layer descriptions.
pub fn stack_to_string(stack: &[LayerSpec]) -> String {
    stack.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn stack_from_str(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(';')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}

/// Hidden state of every recurrent layer in a stack, in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecurrentState<T = f32> {
    pub hidden: Vec<Vec<T>>,
}

/// Result of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T = f32> {
    pub output: Tensor<T>,
    pub state: RecurrentState<T>,
    pub graph: Graph<T>,
    pub output_var: Var,
}

/// Builds the stack on an existing graph. Returns the output and the final
/// recurrent states (as graph nodes, one per GRU layer).
pub fn apply_stack<T: Real>(
    g: &mut Graph<T>,
    params: &NetworkParams<T>,
    stack: &[LayerSpec],
    x: Var,
    state: Option<&RecurrentState<T>>,
) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut finals = Vec::new();
    let mut gru_index = 0;
    for layer in stack {
        h = match layer {
            LayerSpec::Dense(l) => l.apply(g, params, h)?,
            LayerSpec::Conv1d(l) => l.apply(g, params, h)?,
            LayerSpec::Highway(l) => l.apply(g, params, h)?,
            LayerSpec::MaxPool1d { width } => g.max_pool1d(h, *width)?,
            LayerSpec::Softmax => g.softmax(h),
            LayerSpec::Gru(l) => {
                let h0 = match state.and_then(|s| s.hidden.get(gru_index)) {
                    Some(v) => {
                        if v.len() != l.hidden {
                            return Err(shape_err(&l.name, format!("{} state", l.hidden), v.len()));
                        }
                        Some(g.constant(Tensor::row(v.clone())))
                    }
                    None => None,
                };
                gru_index += 1;
                let (all, last) = l.apply(g, params, h, h0, false)?;
                finals.push(last);
                all
            }
        };
    }
    Ok((h, finals))
}

/// Runs a sequential stack over the rows of `input` (one row per time step).
pub fn forward<T: Real>(
    params: &NetworkParams<T>,
    stack: &[LayerSpec],
    input: &Tensor<T>,
    state: Option<&RecurrentState<T>>,
) -> Result<ForwardPass<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let (out, finals) = apply_stack(&mut g, params, stack, x, state)?;
    let state = RecurrentState {
        hidden: finals.iter().map(|&v| g.value(v).data().to_vec()).collect(),
    };
    Ok(ForwardPass {
        output: g.value(out).clone(),
        state,
        graph: g,
        output_var: out,
    })
}

/// Initialises every layer of a stack.
pub fn init_stack<T: Real, R: Rng>(stack: &[LayerSpec], rng: &mut R) -> NetworkParams<T> {
    let mut p = NetworkParams::new();
    for l in stack {
        l.init(rng, &mut p);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense_is_identity() {
        let d = Dense::new("fc", 3, 3, Activation::Linear);
        let mut p = NetworkParams::<f64>::new();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        p.insert("fc.w", Tensor::matrix(3, 3, eye));
        p.insert("fc.b", Tensor::zeros(&[3]));
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]);
        let out = forward(&p, &[LayerSpec::Dense(d)], &x, None).unwrap();
        assert_eq!(out.output.data(), x.data());
    }

    #[test]
    fn zero_softmax_head_is_uniform() {
        let stack = vec![
            LayerSpec::Dense(Dense::new("head", 4, 5, Activation::Linear)),
            LayerSpec::Softmax,
        ];
        let p = init_stack::<f64, _>(&stack, &mut ChaCha8Rng::seed_from_u64(1)).zeroed();
        let x = Tensor::matrix(3, 4, vec![0.3; 12]);
        let out = forward(&p, &stack, &x, None).unwrap();
        assert!(out.output.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_gru_from_zero_state_stays_zero() {
        let stack = vec![LayerSpec::Gru(Gru::new("rnn", 2, 4))];
        let p = init_stack::<f64, _>(&stack, &mut ChaCha8Rng::seed_from_u64(1)).zeroed();
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let out = forward(&p, &stack, &x, None).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.state.hidden, vec![vec![0.0; 4]]);
    }

    #[test]
    fn state_is_carried_between_calls() {
        let stack = vec![LayerSpec::Gru(Gru::new("rnn", 2, 3))];
        let p = init_stack::<f64, _>(&stack, &mut ChaCha8Rng::seed_from_u64(4));
        let x = Tensor::matrix(4, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.1, 0.2]);
        let whole = forward(&p, &stack, &x, None).unwrap();
        let first = forward(&p, &stack, &Tensor::matrix(2, 2, x.data()[..4].to_vec()), None).unwrap();
        let second = forward(
            &p,
            &stack,
            &Tensor::matrix(2, 2, x.data()[4..].to_vec()),
            Some(&first.state),
        )
        .unwrap();
        assert_eq!(&whole.output.data()[6..], second.output.data());
    }

    #[test]
    fn wrong_width_names_layer() {
        let stack = vec![LayerSpec::Dense(Dense::new("enc_in", 4, 2, Activation::Relu))];
        let p = init_stack::<f64, _>(&stack, &mut ChaCha8Rng::seed_from_u64(1));
        let err = forward(&p, &stack, &Tensor::matrix(1, 3, vec![0.0; 3]), None).unwrap_err();
        assert!(err.to_string().contains("enc_in"), "{err}");
    }

    #[test]
    fn stack_text_round_trips() {
        let stack = vec![
            LayerSpec::Dense(Dense::new("a", 40, 128, Activation::Relu)),
            LayerSpec::Gru(Gru::new("r", 128, 64)),
            LayerSpec::Conv1d(Conv1d::new("c", 8, 32, 3, Activation::Relu)),
            LayerSpec::MaxPool1d { width: 2 },
            LayerSpec::Highway(Highway::new("h", 32)),
            LayerSpec::Softmax,
        ];
        let text = stack_to_string(&stack);
        assert_eq!(stack_from_str(&text).unwrap(), stack);
    }
}
