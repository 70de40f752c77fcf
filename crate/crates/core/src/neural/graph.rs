//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation of a forward pass together with its
//! value. [`Graph::backward`] walks the record in reverse and accumulates
//! vector-Jacobian products. All values are rank-2 (`rows × cols`).

use std::collections::HashMap;

use super::{NetworkParams, Real, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    BroadcastRows(Var, usize),
    Conv1d(Var, Var, usize),
    MaxPool1d(Var, usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Floor applied inside the log of the cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

/// Recorded forward computation.
#[derive(Debug, Clone)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Vec<usize>, Var)>,
    param_index: HashMap<String, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, op: Op, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, op: Op) -> Var {
        let value = eval(&op, &self.nodes);
        let needs_grad = self.grad_of(&inputs(&op));
        self.push(op, value, needs_grad)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t.as_matrix(), false)
    }

    /// Leaf that receives a gradient (for input sensitivities).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t.as_matrix(), true)
    }

    /// Registers `name` from `params` as a trainable leaf (once per graph).
    pub fn param(&mut self, params: &NetworkParams<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let t = params.get(name)?;
        let v = self.push(Op::Leaf, t.as_matrix(), true);
        self.params.push((name.to_string(), t.shape().to_vec(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ak) = self.shape(a);
        let (bk, _) = self.shape(b);
        if ak != bk {
            return Err(shape_err("matmul", format!("inner {ak}"), format!("inner {bk}")));
        }
        Ok(self.record(Op::MatMul(a, b)))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.record(Op::Add(a, b)))
    }

    /// `a + b` with the single row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != ac {
            return Err(shape_err("add_row", format!("1x{ac}"), format!("{br}x{bc}")));
        }
        Ok(self.record(Op::AddRow(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.record(Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.record(Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::AddScalar(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.record(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.record(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.record(Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.record(Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.record(Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.record(Op::Softmax(a))
    }

    /// `Σ_rows −ln(max(p[row, target], 1e-12))` over probability rows.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(probs);
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{r} targets"),
                format!("{} targets", targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(invalid(format!("target {t} out of range for {c} classes")));
        }
        Ok(self.record(Op::CrossEntropy(probs, targets.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.record(Op::Mean(a))
    }

    /// Column-wise concatenation of equal-row operands.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| invalid("concat of nothing"))?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat", format!("{rows} rows"), self.shape(p).0));
            }
        }
        Ok(self.record(Op::Concat(parts.to_vec())))
    }

    /// Row-wise stacking of equal-column operands.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| invalid("concat_rows of nothing"))?;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("concat_rows", format!("{cols} cols"), self.shape(p).1));
            }
        }
        Ok(self.record(Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if len == 0 || start + len > r {
            return Err(shape_err("slice_rows", format!("range within {r}"), format!("{start}+{len}")));
        }
        Ok(self.record(Op::SliceRows(a, start, len)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if len == 0 || start + len > c {
            return Err(shape_err("slice_cols", format!("range within {c}"), format!("{start}+{len}")));
        }
        Ok(self.record(Op::SliceCols(a, start, len)))
    }

    /// Repeat a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if r != 1 || n == 0 {
            return Err(shape_err("broadcast_rows", "1 row", r));
        }
        Ok(self.record(Op::BroadcastRows(a, n)))
    }

    /// Same-length 1-D convolution over rows. `x` is `T×Cin`, `w` is `(k·Cin)×Cout`.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize) -> Result<Var> {
        let (_, cin) = self.shape(x);
        let (wr, _) = self.shape(w);
        if kernel == 0 || wr != kernel * cin {
            return Err(shape_err("conv1d", format!("{} weight rows", kernel * cin), wr));
        }
        Ok(self.record(Op::Conv1d(x, w, kernel)))
    }

    /// Max over a `width`-row window starting at each row (stride 1, same length).
    pub fn max_pool1d(&mut self, x: Var, width: usize) -> Result<Var> {
        if width == 0 {
            return Err(invalid("max_pool1d width must be positive"));
        }
        Ok(self.record(Op::MaxPool1d(x, width)))
    }

    /// Re-executes every recorded op from the leaf values and returns `out`.
    pub fn replay(&self, out: Var) -> Tensor<T> {
        let mut nodes: Vec<Node<T>> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let value = match n.op {
                Op::Leaf => n.value.clone(),
                _ => eval(&n.op, &nodes),
            };
            nodes.push(Node {
                op: n.op.clone(),
                value,
                needs_grad: n.needs_grad,
            });
        }
        nodes.swap_remove(out.0).value
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|g| Tensor::matrix(n.value.rows(), n.value.cols(), g)))
                .collect(),
        })
    }

    /// Parameter gradients of `loss` for every parameter registered in this graph.
    pub fn gradients(&self, loss: Var) -> Result<NetworkParams<T>> {
        let g = self.backward(loss)?;
        let mut out = NetworkParams::new();
        for (name, shape, v) in &self.params {
            let t = match g.get(*v) {
                Some(t) => Tensor::new(shape.clone(), t.data().to_vec())?,
                None => Tensor::zeros(shape),
            };
            out.insert(name.clone(), t);
        }
        Ok(out)
    }

    /// Like [`Graph::gradients`] but shaped like `params`: unreached entries are zero.
    pub fn gradients_for(&self, loss: Var, params: &NetworkParams<T>) -> Result<NetworkParams<T>> {
        let reached = self.gradients(loss)?;
        let mut out = params.zeros_like();
        for (name, t) in reached.iter() {
            match out.get_mut(name) {
                Some(slot) => *slot = t.clone(),
                None => return Err(Error::KeyMismatch(format!("`{name}` not in parameter set"))),
            }
        }
        Ok(out)
    }

    fn vjp(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let (rows, cols) = (node.value.rows(), node.value.cols());
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    // dA = dC · Bᵀ
                    T::gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, T::one(), ga);
                }
                if needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    // dB = Aᵀ · dC
                    T::gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, T::one(), gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        axpy(slot(grads, v, g.len()), g, T::one());
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    axpy(slot(grads, *a, g.len()), g, T::one());
                }
                if needs(*b) {
                    let gb = slot(grads, *b, cols);
                    for r in 0..rows {
                        axpy(gb, &g[r * cols..(r + 1) * cols], T::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(slot(grads, *a, g.len()), g, T::one());
                }
                if needs(*b) {
                    axpy(slot(grads, *b, g.len()), g, -T::one());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * bi;
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => axpy(slot(grads, *a, g.len()), g, T::of(*c)),
            Op::AddScalar(a, _) => axpy(slot(grads, *a, g.len()), g, T::one()),
            Op::Tanh(a) => unary(grads, *a, g, |gi, _, yi| gi * (T::one() - yi * yi), val(*a).data(), y),
            Op::Sigmoid(a) => unary(grads, *a, g, |gi, _, yi| gi * yi * (T::one() - yi), val(*a).data(), y),
            Op::Relu(a) => unary(
                grads,
                *a,
                g,
                |gi, xi, _| if xi > T::zero() { gi } else { T::zero() },
                val(*a).data(),
                y,
            ),
            Op::Exp(a) => unary(grads, *a, g, |gi, _, yi| gi * yi, val(*a).data(), y),
            Op::Square(a) => unary(grads, *a, g, |gi, xi, _| gi * (xi + xi), val(*a).data(), y),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (T::of(*lo), T::of(*hi));
                unary(
                    grads,
                    *a,
                    g,
                    |gi, xi, _| if xi >= lo && xi <= hi { gi } else { T::zero() },
                    val(*a).data(),
                    y,
                )
            }
            Op::Softmax(a) => {
                let ga = slot(grads, *a, g.len());
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..cols {
                        let d = &mut ga[r * cols + c];
                        *d = *d + yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::CrossEntropy(p, targets) => {
                let pv = val(*p);
                let pc = pv.cols();
                let floor = T::of(CE_FLOOR);
                let gp = slot(grads, *p, pv.len());
                for (r, &t) in targets.iter().enumerate() {
                    let q = pv.data()[r * pc + t];
                    if q > floor {
                        gp[r * pc + t] = gp[r * pc + t] - g[0] / q;
                    }
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                slot(grads, *a, n).iter_mut().for_each(|d| *d = *d + g[0]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let s = g[0] / T::of(n as f64);
                slot(grads, *a, n).iter_mut().for_each(|d| *d = *d + s);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if needs(p) {
                        let gp = slot(grads, p, rows * pc);
                        for r in 0..rows {
                            axpy(&mut gp[r * pc..(r + 1) * pc], &g[r * cols + off..r * cols + off + pc], T::one());
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        axpy(slot(grads, p, n), &g[off..off + n], T::one());
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start, len) => {
                let ac = val(*a).cols();
                let n = val(*a).len();
                let ga = slot(grads, *a, n);
                axpy(&mut ga[start * ac..(start + len) * ac], g, T::one());
            }
            Op::SliceCols(a, start, len) => {
                let av = val(*a);
                let ac = av.cols();
                let ga = slot(grads, *a, av.len());
                for r in 0..rows {
                    axpy(&mut ga[r * ac + start..r * ac + start + len], &g[r * len..(r + 1) * len], T::one());
                }
            }
            Op::BroadcastRows(a, n) => {
                let ga = slot(grads, *a, cols);
                for r in 0..*n {
                    axpy(ga, &g[r * cols..(r + 1) * cols], T::one());
                }
            }
            Op::Conv1d(x, w, k) => {
                let (xv, wv) = (val(*x), val(*w));
                let (t, cin, cout) = (xv.rows(), xv.cols(), wv.cols());
                let kc = k * cin;
                if needs(*w) {
                    let cols_buf = im2col(xv.data(), t, cin, *k);
                    let gw = slot(grads, *w, kc * cout);
                    T::gemm(kc, t, cout, &cols_buf, 1, kc as isize, g, cout as isize, 1, T::one(), gw);
                }
                if needs(*x) {
                    let mut dcols = vec![T::zero(); t * kc];
                    T::gemm(t, cout, kc, g, cout as isize, 1, wv.data(), 1, cout as isize, T::zero(), &mut dcols);
                    let gx = slot(grads, *x, t * cin);
                    let left = (k - 1) / 2;
                    for r in 0..t {
                        for j in 0..*k {
                            let src = r as isize + j as isize - left as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let s = src as usize;
                            axpy(
                                &mut gx[s * cin..(s + 1) * cin],
                                &dcols[r * kc + j * cin..r * kc + (j + 1) * cin],
                                T::one(),
                            );
                        }
                    }
                }
            }
            Op::MaxPool1d(x, width) => {
                let xv = val(*x);
                let gx = slot(grads, *x, xv.len());
                for r in 0..rows {
                    for c in 0..cols {
                        let src = argmax_window(xv.data(), rows, cols, r, c, *width);
                        gx[src * cols + c] = gx[src * cols + c] + g[r * cols + c];
                    }
                }
            }
        }
    }
}

/// Per-node gradients from a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn axpy<T: Real>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

fn unary<T: Real>(
    grads: &mut [Option<Vec<T>>],
    a: Var,
    g: &[T],
    f: impl Fn(T, T, T) -> T,
    x: &[T],
    y: &[T],
) {
    let ga = slot(grads, a, g.len());
    for i in 0..g.len() {
        ga[i] = ga[i] + f(g[i], x[i], y[i]);
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Conv1d(a, b, _) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Exp(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::Softmax(a)
        | Op::CrossEntropy(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SliceRows(a, _, _)
        | Op::SliceCols(a, _, _)
        | Op::BroadcastRows(a, _)
        | Op::MaxPool1d(a, _) => vec![*a],
        Op::Concat(v) | Op::ConcatRows(v) => v.clone(),
    }
}

fn im2col<T: Real>(x: &[T], t: usize, cin: usize, k: usize) -> Vec<T> {
    let kc = k * cin;
    let left = (k - 1) / 2;
    let mut out = vec![T::zero(); t * kc];
    for r in 0..t {
        for j in 0..k {
            let src = r as isize + j as isize - left as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            let s = src as usize;
            out[r * kc + j * cin..r * kc + (j + 1) * cin].copy_from_slice(&x[s * cin..(s + 1) * cin]);
        }
    }
    out
}

fn argmax_window<T: Real>(x: &[T], rows: usize, cols: usize, r: usize, c: usize, width: usize) -> usize {
    let end = (r + width).min(rows);
    let mut best = r;
    for s in r + 1..end {
        if x[s * cols + c] > x[best * cols + c] {
            best = s;
        }
    }
    best
}

fn map<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::matrix(a.rows(), a.cols(), a.data().iter().map(|&v| f(v)).collect())
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::matrix(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn eval<T: Real>(op: &Op, nodes: &[Node<T>]) -> Tensor<T> {
    let val = |v: &Var| &nodes[v.0].value;
    match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, av.data(), k as isize, 1, bv.data(), n as isize, 1, T::zero(), &mut out);
            Tensor::matrix(m, n, out)
        }
        Op::Add(a, b) => zip(val(a), val(b), |x, y| x + y),
        Op::AddRow(a, b) => {
            let (av, bv) = (val(a), val(b));
            let c = av.cols();
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv.data()[i % c])
                .collect();
            Tensor::matrix(av.rows(), c, data)
        }
        Op::Sub(a, b) => zip(val(a), val(b), |x, y| x - y),
        Op::Mul(a, b) => zip(val(a), val(b), |x, y| x * y),
        Op::Scale(a, c) => {
            let c = T::of(*c);
            map(val(a), |x| x * c)
        }
        Op::AddScalar(a, c) => {
            let c = T::of(*c);
            map(val(a), |x| x + c)
        }
        Op::Tanh(a) => map(val(a), T::tanh),
        Op::Sigmoid(a) => map(val(a), sigmoid),
        Op::Relu(a) => map(val(a), |x| x.max(T::zero())),
        Op::Exp(a) => map(val(a), T::exp),
        Op::Square(a) => map(val(a), |x| x * x),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (T::of(*lo), T::of(*hi));
            map(val(a), |x| x.max(lo).min(hi))
        }
        Op::Softmax(a) => {
            let av = val(a);
            let c = av.cols();
            let mut out = av.data().to_vec();
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
            Tensor::matrix(av.rows(), c, out)
        }
        Op::CrossEntropy(p, targets) => {
            let pv = val(p);
            let floor = T::of(CE_FLOOR);
            let loss = targets
                .iter()
                .enumerate()
                .map(|(r, &t)| -pv.at(r, t).max(floor).ln())
                .sum();
            Tensor::scalar(loss)
        }
        Op::Sum(a) => Tensor::scalar(val(a).data().iter().copied().sum()),
        Op::Mean(a) => {
            let av = val(a);
            Tensor::scalar(av.data().iter().copied().sum::<T>() / T::of(av.len() as f64))
        }
        Op::Concat(parts) => {
            let rows = val(&parts[0]).rows();
            let cols: usize = parts.iter().map(|p| val(p).cols()).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    out.extend_from_slice(val(p).row_slice(r));
                }
            }
            Tensor::matrix(rows, cols, out)
        }
        Op::ConcatRows(parts) => {
            let cols = val(&parts[0]).cols();
            let mut out = Vec::new();
            for p in parts {
                out.extend_from_slice(val(p).data());
            }
            Tensor::matrix(out.len() / cols, cols, out)
        }
        Op::SliceRows(a, start, len) => {
            let av = val(a);
            let c = av.cols();
            Tensor::matrix(*len, c, av.data()[start * c..(start + len) * c].to_vec())
        }
        Op::SliceCols(a, start, len) => {
            let av = val(a);
            let mut out = Vec::with_capacity(av.rows() * len);
            for r in 0..av.rows() {
                out.extend_from_slice(&av.row_slice(r)[*start..start + len]);
            }
            Tensor::matrix(av.rows(), *len, out)
        }
        Op::BroadcastRows(a, n) => {
            let av = val(a);
            let mut out = Vec::with_capacity(n * av.cols());
            for _ in 0..*n {
                out.extend_from_slice(av.data());
            }
            Tensor::matrix(*n, av.cols(), out)
        }
        Op::Conv1d(x, w, k) => {
            let (xv, wv) = (val(x), val(w));
            let (t, cin, cout) = (xv.rows(), xv.cols(), wv.cols());
            let kc = k * cin;
            let cols = im2col(xv.data(), t, cin, *k);
            let mut out = vec![T::zero(); t * cout];
            T::gemm(t, kc, cout, &cols, kc as isize, 1, wv.data(), cout as isize, 1, T::zero(), &mut out);
            Tensor::matrix(t, cout, out)
        }
        Op::MaxPool1d(x, width) => {
            let xv = val(x);
            let (rows, cols) = (xv.rows(), xv.cols());
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(xv.data()[argmax_window(xv.data(), rows, cols, r, c, *width) * cols + c]);
                }
            }
            Tensor::matrix(rows, cols, out)
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
