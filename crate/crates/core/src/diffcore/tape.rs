use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use crate::error::{dim_err, shapes_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise maps with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Exp,
    Log,
    Softplus,
    Abs,
    Powf(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MulConst { x: Var, factor: Tensor },
    Unary { x: Var, kind: Unary },
    Clamp { x: Var, lo: f64, hi: f64 },
    ConcatCols(Var, Var),
    PairwiseAbsDiff(Var),
    Reshape(Var),
    Transpose(Var),
    RowSum(Var),
    MeanRows(Var),
    SumAll(Var),
    LayerNorm { x: Var, eps: f64 },
    GaussianSample { mu: Var, sigma2: Var, noise: Tensor },
    ScalarAffine { x: Var, psi: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended as operations run, so every input precedes its output
/// and a reverse sweep is a valid topological order for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape if `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => libm::tanh(x),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Exp => libm::exp(x),
            Unary::Log => libm::log(x),
            Unary::Softplus => softplus(x),
            Unary::Abs => libm::fabs(x),
            Unary::Powf(p) => libm::pow(x, p),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Powf(p) => p * libm::pow(x, p - 1.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
            Unary::Abs => "abs",
            Unary::Powf(_) => "powf",
        }
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf value. Only leaves with `requires_grad` (and values
    /// derived from them) receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[n,i] · w[i,o] + b[o]`, the bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.value(b).numel() != ws[1] {
            return Err(shapes_err("linear", &[xs, ws, bs]));
        }
        let (n, i, o) = (xs[0], ws[0], ws[1]);
        let mut out = matmul_raw(self.value(x).data(), self.value(w).data(), n, i, o);
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (y, bv) in row.iter_mut().zip(bias) {
                *y += bv;
            }
        }
        let t = Tensor::from_parts(vec![n, o], out);
        Ok(self.push(t, Op::Linear { x, w, b }, &[x, w, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale }, &[x])
    }

    /// Elementwise product with a constant tensor (masks, dropout keep-scales).
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        if self.shape(x) != factor.shape() {
            return Err(dim_err("mul_const", self.shape(x), factor.shape()));
        }
        let out = self.value(x).zip(&factor, |a, b| a * b);
        Ok(self.push(out, Op::MulConst { x, factor }, &[x]))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let input = self.value(x);
        match kind {
            Unary::Log if input.data().iter().any(|&v| v <= 0.0) => {
                return Err(Error::Domain {
                    op: "log",
                    detail: "non-positive entry".into(),
                })
            }
            Unary::Powf(p) if libm::trunc(p) != p && input.data().iter().any(|&v| v < 0.0) => {
                return Err(Error::Domain {
                    op: "powf",
                    detail: "negative base with fractional exponent".into(),
                })
            }
            _ => {}
        }
        let out = input.map(|v| kind.apply(v));
        check_finite(kind.name(), &out)?;
        Ok(self.push(out, Op::Unary { x, kind }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh).expect("tanh is total")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope)).expect("leaky relu is total")
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus).expect("softplus is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shapes_err("concat_cols", &[sa, sb]));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&va[i * p..(i + 1) * p]);
            out.extend_from_slice(&vb[i * q..(i + 1) * q]);
        }
        let t = Tensor::from_parts(vec![n, p + q], out);
        Ok(self.push(t, Op::ConcatCols(a, b), &[a, b]))
    }

    /// `h[V,d] ↦ out[V·V, d]` with row `i·V + j` equal to `|h_i − h_j|`.
    pub fn pairwise_abs_diff(&mut self, h: Var) -> Result<Var> {
        let s = self.shape(h);
        if s.len() != 2 {
            return Err(shapes_err("pairwise_abs_diff", &[s]));
        }
        let (v, d) = (s[0], s[1]);
        let hv = self.value(h).data();
        let mut out = Vec::with_capacity(v * v * d);
        for i in 0..v {
            for j in 0..v {
                for k in 0..d {
                    out.push(libm::fabs(hv[i * d + k] - hv[j * d + k]));
                }
            }
        }
        let t = Tensor::from_parts(vec![v * v, d], out);
        Ok(self.push(t, Op::PairwiseAbsDiff(h), &[h]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(dim_err("reshape", shape, self.shape(x)));
        }
        let t = self.value(x).clone().with_shape(shape);
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(shapes_err("transpose", &[self.shape(x)]));
        }
        let t = self.value(x).transpose();
        Ok(self.push(t, Op::Transpose(x), &[x]))
    }

    /// `[n,m] ↦ [n,1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, m) = (t.rows(), t.cols());
        let out = (0..n).map(|i| t.data()[i * m..(i + 1) * m].iter().sum()).collect();
        self.push(Tensor::from_parts(vec![n, 1], out), Op::RowSum(x), &[x])
    }

    /// `[n,m] ↦ [1,m]`, the mean over rows.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, m) = (t.rows(), t.cols());
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
        self.push(Tensor::from_parts(vec![1, m], out), Op::MeanRows(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (n, m) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            out.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let t = Tensor::from_parts(t.shape().to_vec(), out);
        self.push(t, Op::LayerNorm { x, eps }, &[x])
    }

    /// `mu + sqrt(sigma2) ⊙ noise` with a fixed standard-normal `noise`.
    pub fn gaussian_reparam(&mut self, mu: Var, sigma2: Var, noise: Tensor) -> Result<Var> {
        self.same_shape("gaussian_sample", mu, sigma2)?;
        if noise.shape() != self.shape(mu) {
            return Err(dim_err("gaussian_sample", self.shape(mu), noise.shape()));
        }
        if self.value(sigma2).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain {
                op: "gaussian_sample",
                detail: "negative variance".into(),
            });
        }
        let s2 = self.value(sigma2).data();
        let out: Vec<f64> = self
            .value(mu)
            .data()
            .iter()
            .zip(s2)
            .zip(noise.data())
            .map(|((m, s), e)| m + libm::sqrt(*s) * e)
            .collect();
        let t = Tensor::from_parts(self.shape(mu).to_vec(), out);
        Ok(self.push(t, Op::GaussianSample { mu, sigma2, noise }, &[mu, sigma2]))
    }

    /// `psi[0] · x + psi[1]` for a two-entry `psi`.
    pub fn scalar_affine(&mut self, x: Var, psi: Var) -> Result<Var> {
        let p = self.value(psi).data();
        if p.len() != 2 {
            return Err(dim_err("scalar_affine", &[2], self.shape(psi)));
        }
        let (w, b) = (p[0], p[1]);
        let out = self.value(x).map(|v| w * v + b);
        check_finite("scalar_affine", &out)?;
        Ok(self.push(out, Op::ScalarAffine { x, psi }, &[x, psi]))
    }

    /// Reverse sweep from a single-entry `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(dim_err("backward", &[1], self.shape(root)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    let ga = matmul_a_bt(g.data(), bv.data(), n, m, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![n, k], ga));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = matmul_at_b(av.data(), g.data(), n, k, m);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, m], gb));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, i, o) = (xv.rows(), wv.rows(), wv.cols());
                if self.nodes[x.0].requires_grad {
                    let gx = matmul_a_bt(g.data(), wv.data(), n, o, i);
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, i], gx));
                }
                if self.nodes[w.0].requires_grad {
                    let gw = matmul_at_b(xv.data(), g.data(), n, i, o);
                    self.accumulate(grads, *w, Tensor::from_parts(vec![i, o], gw));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; o];
                    for row in g.data().chunks(o) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = val(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::from_parts(shape, gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g.zip(val(*b), |x, y| x * y));
                self.accumulate(grads, *b, g.zip(val(*a), |x, y| x * y));
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::MulConst { x, factor } => {
                self.accumulate(grads, *x, g.zip(factor, |a, b| a * b));
            }
            Op::Unary { x, kind } => {
                let xv = val(*x);
                let out = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(out.data())
                    .map(|((gv, xi), yi)| gv * kind.derivative(*xi, *yi))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::Clamp { x, lo, hi } => {
                let gx = g.zip(val(*x), |gv, xv| if xv > *lo && xv < *hi { gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (val(*a).cols(), val(*b).cols());
                let n = g.rows();
                let mut ga = Vec::with_capacity(n * p);
                let mut gb = Vec::with_capacity(n * q);
                for row in g.data().chunks(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                self.accumulate(grads, *a, Tensor::from_parts(vec![n, p], ga));
                self.accumulate(grads, *b, Tensor::from_parts(vec![n, q], gb));
            }
            Op::PairwiseAbsDiff(h) => {
                let hv = val(*h);
                let (v, d) = (hv.rows(), hv.cols());
                let hd = hv.data();
                let mut gh = vec![0.0; v * d];
                for i in 0..v {
                    for j in 0..v {
                        let grow = &g.data()[(i * v + j) * d..(i * v + j + 1) * d];
                        for k in 0..d {
                            let diff = hd[i * d + k] - hd[j * d + k];
                            let s = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            gh[i * d + k] += grow[k] * s;
                            gh[j * d + k] -= grow[k] * s;
                        }
                    }
                }
                self.accumulate(grads, *h, Tensor::from_parts(vec![v, d], gh));
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().with_shape(&shape));
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose());
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let (n, m) = (xv.rows(), xv.cols());
                let mut gx = Vec::with_capacity(n * m);
                for i in 0..n {
                    gx.extend(core::iter::repeat(g.data()[i]).take(m));
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), gx));
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let n = xv.rows();
                let scaled: Vec<f64> = g.data().iter().map(|v| v / n as f64).collect();
                let mut gx = Vec::with_capacity(xv.numel());
                for _ in 0..n {
                    gx.extend_from_slice(&scaled);
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), gx));
            }
            Op::SumAll(x) => {
                let shape = val(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.data()[0]));
            }
            Op::LayerNorm { x, eps } => {
                let xv = val(*x);
                let y = &node.value;
                let (n, m) = (xv.rows(), xv.cols());
                let mut gx = Vec::with_capacity(n * m);
                for i in 0..n {
                    let row = xv.row(i);
                    let mean = row.iter().sum::<f64>() / m as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                    let inv = 1.0 / libm::sqrt(var + eps);
                    let (gr, yr) = (g.row(i), y.row(i));
                    let gmean = gr.iter().sum::<f64>() / m as f64;
                    let gymean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    gx.extend(gr.iter().zip(yr).map(|(gv, yv)| inv * (gv - gmean - yv * gymean)));
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), gx));
            }
            Op::GaussianSample { mu, sigma2, noise } => {
                self.accumulate(grads, *mu, g.clone());
                if self.nodes[sigma2.0].requires_grad {
                    let s2 = val(*sigma2);
                    let data = g
                        .data()
                        .iter()
                        .zip(s2.data())
                        .zip(noise.data())
                        .map(|((gv, s), e)| if *s > 0.0 { gv * e / (2.0 * libm::sqrt(*s)) } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *sigma2, Tensor::from_parts(s2.shape().to_vec(), data));
                }
            }
            Op::ScalarAffine { x, psi } => {
                let xv = val(*x);
                let w = val(*psi).data()[0];
                self.accumulate(grads, *x, g.map(|v| v * w));
                if self.nodes[psi.0].requires_grad {
                    let gw: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                    let gb: f64 = g.sum();
                    let shape = val(*psi).shape().to_vec();
                    self.accumulate(grads, *psi, Tensor::from_parts(shape, vec![gw, gb]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_hand_product() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1., 2.]]).unwrap());
        let w = t.param(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap());
        let b = t.param(Tensor::zeros(&[2]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1., 2.]);

        let x = t.constant(Tensor::from_rows(&[vec![1., 1.]]).unwrap());
        let w = t.param(Tensor::from_rows(&[vec![2., 3.], vec![4., 5.]]).unwrap());
        let b = t.param(Tensor::ones(&[2]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[7., 9.]);
        let s = t.sum_all(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[1., 1.]);
    }

    #[test]
    fn linear_rejects_bad_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 3]));
        let w = t.param(Tensor::zeros(&[2, 2]));
        let b = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.linear(x, w, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elementwise_reference_points() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        let th = t.tanh(z);
        assert_eq!(t.value(s).data()[0], 0.5);
        assert_eq!(t.value(th).data()[0], 0.0);
        let m = t.constant(Tensor::scalar(-1.0));
        let l = t.leaky_relu(m, 0.01);
        assert_eq!(t.value(l).data()[0], -0.01);
        assert!(matches!(t.log(m), Err(Error::Domain { .. })));
        assert!(matches!(t.log(z), Err(Error::Domain { .. })));
    }

    #[test]
    fn exp_overflow_is_reported() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(1000.0));
        assert!(matches!(t.unary(x, Unary::Exp), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let p = t.param(Tensor::scalar(5.0));
        let y = t.mul(c, p).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data()[0], 2.0);
    }
}
