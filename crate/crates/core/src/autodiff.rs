//! Dense tensors with a define-by-run tape for reverse-mode gradients.
//!
//! Every forward pass records onto a fresh [`Tape`]. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! The primitive set is deliberately narrow: exactly the operations the model
//! needs, with shape checks that name the offending primitive.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                context: "tensor construction",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// Element `(r, c)` of a 2-D tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Row(Var, usize),
    Slice(Var, usize),
    Diff(Var),
    Tanh(Var),
    Softmax(Var),
    DilatedConv {
        input: Var,
        kernels: Var,
        biases: Var,
        dilation: usize,
    },
    Sum(Var),
    Nll(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Probability floor applied before taking logs in [`Tape::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Append-only record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node: a parameter or a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape.clone();
        self.push(Tensor { shape, data }, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let va = self.value(a);
        let data = va.data.iter().map(|x| x * factor).collect();
        let shape = va.shape.clone();
        self.push(Tensor { shape, data }, Op::Scale(a, factor))
    }

    /// `a + s` with the single-element tensor `s` broadcast over `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "add_scalar",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.value(s).data[0];
        let va = self.value(a);
        let data = va.data.iter().map(|x| x + sv).collect();
        let shape = va.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddScalar(a, s)))
    }

    /// `W x` for `W: [r, c]`, `x: [c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: sw.to_vec(),
                rhs: sx.to_vec(),
            });
        }
        let (r, c) = (sw[0], sw[1]);
        let (wv, xv) = (&self.value(w).data, &self.value(x).data);
        let data = (0..r)
            .map(|i| wv[i * c..(i + 1) * c].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(Tensor::vector(data), Op::MatVec(w, x)))
    }

    /// `wᵀ X` for `w: [r]`, `X: [r, n]`, giving `[n]`.
    pub fn vecmat(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 1 || sx.len() != 2 || sw[0] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "vecmat",
                lhs: sw.to_vec(),
                rhs: sx.to_vec(),
            });
        }
        let (r, n) = (sx[0], sx[1]);
        let (wv, xv) = (&self.value(w).data, &self.value(x).data);
        let mut data = vec![0.0; n];
        for k in 0..r {
            for (j, out) in data.iter_mut().enumerate() {
                *out += wv[k] * xv[k * n + j];
            }
        }
        Ok(self.push(Tensor::vector(data), Op::VecMat(w, x)))
    }

    /// Concatenation along the last axis. Inputs are all 1-D, or all 2-D with
    /// the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Config("concat of nothing".into()))?;
        let lead = self.shape(*first).to_vec();
        let rows = if lead.len() == 2 { lead[0] } else { 1 };
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == lead.len() && (s.len() == 1 || (s.len() == 2 && s[0] == rows));
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: lead,
                    rhs: s.to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let shape = if lead.len() == 2 {
            vec![rows, total]
        } else {
            vec![total]
        };
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec())))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or_else(|| Error::Config("stack of nothing".into()))?;
        let s0 = self.shape(*first).to_vec();
        let mut data = Vec::new();
        for r in rows {
            let s = self.shape(*r);
            if s.len() != 1 || s != s0.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
            data.extend_from_slice(&self.value(*r).data);
        }
        let shape = vec![rows.len(), s0[0]];
        Ok(self.push(Tensor { shape, data }, Op::Stack(rows.to_vec())))
    }

    /// Row `r` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || r >= s[0] {
            return Err(Error::ShapeMismatch {
                op: "row",
                lhs: s.to_vec(),
                rhs: vec![r],
            });
        }
        let data = self.value(x).row(r).to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row(x, r)))
    }

    /// Contiguous sub-vector `x[start..end]`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || start > end || end > s[0] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: s.to_vec(),
                rhs: vec![start, end],
            });
        }
        let data = self.value(x).data[start..end].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice(x, start)))
    }

    /// First-order differences `x[i+1] - x[i]`.
    pub fn diff(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || s[0] < 2 {
            return Err(Error::ShapeMismatch {
                op: "diff",
                lhs: s.to_vec(),
                rhs: vec![2],
            });
        }
        let data = self.value(x).data.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(self.push(Tensor::vector(data), Op::Diff(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data.iter().map(|v| v.tanh()).collect();
        let shape = vx.shape.clone();
        self.push(Tensor { shape, data }, Op::Tanh(x))
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let data = softmax(&self.value(x).data);
        Ok(self.push(Tensor::vector(data), Op::Softmax(x)))
    }

    /// Two-output dilated convolution over a `[rows, m]` input.
    ///
    /// `kernels` is `[2, rows, width]` and `biases` is `[2]`. Output `p` at
    /// column `j` is `Σ_k Σ_l input[k, j + dilation·l] · kernels[p, k, l] + biases[p]`
    /// for `j < m - dilation·(width - 1)`.
    pub fn dilated_conv(
        &mut self,
        input: Var,
        kernels: Var,
        biases: Var,
        dilation: usize,
    ) -> Result<Var> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernels), self.shape(biases));
        let shape_err = || Error::ShapeMismatch {
            op: "dilated_conv",
            lhs: si.to_vec(),
            rhs: sk.to_vec(),
        };
        if si.len() != 2 || sk.len() != 3 || sk[1] != si[0] || sb != [sk[0]] {
            return Err(shape_err());
        }
        let (rows, m) = (si[0], si[1]);
        let (outs, width) = (sk[0], sk[2]);
        let span = dilation * (width.max(1) - 1);
        if width == 0 || m <= span {
            return Err(Error::Config(format!(
                "dilated_conv: series of length {m} is too short for width {width} at dilation {dilation} (need at least {})",
                span + 1
            )));
        }
        let q = m - span;
        let (x, g, b) = (
            &self.value(input).data,
            &self.value(kernels).data,
            &self.value(biases).data,
        );
        let mut data = vec![0.0; outs * q];
        for p in 0..outs {
            for j in 0..q {
                let mut acc = b[p];
                for k in 0..rows {
                    for l in 0..width {
                        acc += x[k * m + j + dilation * l] * g[(p * rows + k) * width + l];
                    }
                }
                data[p * q + j] = acc;
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![outs, q],
                data,
            },
            Op::DilatedConv {
                input,
                kernels,
                biases,
                dilation,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// `-ln(max(p[target], PROB_FLOOR))` for a probability vector `p`.
    pub fn nll(&mut self, probs: Var, target: usize) -> Result<Var> {
        let s = self.shape(probs);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::ShapeMismatch {
                op: "nll",
                lhs: s.to_vec(),
                rhs: vec![target],
            });
        }
        let p = self.value(probs).data[target].max(PROB_FLOOR);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::Nll(probs, target)))
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(go) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &go, &mut grads);
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (g, d) in slot(grads, *a, go.len()).iter_mut().zip(go) {
                    *g += d;
                }
                for (g, d) in slot(grads, *b, go.len()).iter_mut().zip(go) {
                    *g += d;
                }
            }
            Op::Sub(a, b) => {
                for (g, d) in slot(grads, *a, go.len()).iter_mut().zip(go) {
                    *g += d;
                }
                for (g, d) in slot(grads, *b, go.len()).iter_mut().zip(go) {
                    *g -= d;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                {
                    let ga = slot(grads, *a, go.len());
                    for i in 0..go.len() {
                        ga[i] += go[i] * vb[i];
                    }
                }
                let gb = slot(grads, *b, go.len());
                for i in 0..go.len() {
                    gb[i] += go[i] * va[i];
                }
            }
            Op::Scale(a, f) => {
                for (g, d) in slot(grads, *a, go.len()).iter_mut().zip(go) {
                    *g += d * f;
                }
            }
            Op::AddScalar(a, s) => {
                for (g, d) in slot(grads, *a, go.len()).iter_mut().zip(go) {
                    *g += d;
                }
                slot(grads, *s, 1)[0] += go.iter().sum::<f64>();
            }
            Op::MatVec(w, x) => {
                let (wv, xv) = (&val(*w).data, &val(*x).data);
                let c = xv.len();
                {
                    let gw = slot(grads, *w, wv.len());
                    for (i, d) in go.iter().enumerate() {
                        for j in 0..c {
                            gw[i * c + j] += d * xv[j];
                        }
                    }
                }
                let gx = slot(grads, *x, c);
                for (i, d) in go.iter().enumerate() {
                    for j in 0..c {
                        gx[j] += d * wv[i * c + j];
                    }
                }
            }
            Op::VecMat(w, x) => {
                let (wv, xv) = (&val(*w).data, &val(*x).data);
                let n = go.len();
                {
                    let gw = slot(grads, *w, wv.len());
                    for k in 0..wv.len() {
                        gw[k] += (0..n).map(|j| go[j] * xv[k * n + j]).sum::<f64>();
                    }
                }
                let gx = slot(grads, *x, xv.len());
                for k in 0..wv.len() {
                    for j in 0..n {
                        gx[k * n + j] += wv[k] * go[j];
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let two_d = node.value.shape.len() == 2;
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let w = pv.cols();
                    let gp = slot(grads, *p, pv.len());
                    let nrows = if two_d { rows } else { 1 };
                    for r in 0..nrows {
                        for j in 0..w {
                            gp[r * w + j] += go[r * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::Stack(rows) => {
                let n = node.value.cols();
                for (r, v) in rows.iter().enumerate() {
                    for (g, d) in slot(grads, *v, n).iter_mut().zip(&go[r * n..(r + 1) * n]) {
                        *g += d;
                    }
                }
            }
            Op::Row(x, r) => {
                let vx = val(*x);
                let c = vx.cols();
                let gx = slot(grads, *x, vx.len());
                for j in 0..c {
                    gx[r * c + j] += go[j];
                }
            }
            Op::Slice(x, start) => {
                let gx = slot(grads, *x, val(*x).len());
                for (j, d) in go.iter().enumerate() {
                    gx[start + j] += d;
                }
            }
            Op::Diff(x) => {
                let gx = slot(grads, *x, go.len() + 1);
                for (i, d) in go.iter().enumerate() {
                    gx[i + 1] += d;
                    gx[i] -= d;
                }
            }
            Op::Tanh(x) => {
                let y = &node.value.data;
                for (i, g) in slot(grads, *x, go.len()).iter_mut().enumerate() {
                    *g += go[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value.data;
                let dot: f64 = go.iter().zip(y).map(|(a, b)| a * b).sum();
                for (i, g) in slot(grads, *x, go.len()).iter_mut().enumerate() {
                    *g += y[i] * (go[i] - dot);
                }
            }
            Op::DilatedConv {
                input,
                kernels,
                biases,
                dilation,
            } => {
                let (vi, vk) = (val(*input), val(*kernels));
                let (rows, m) = (vi.shape[0], vi.shape[1]);
                let (outs, width) = (vk.shape[0], vk.shape[2]);
                let q = node.value.shape[1];
                {
                    let gi = slot(grads, *input, vi.len());
                    for p in 0..outs {
                        for j in 0..q {
                            let d = go[p * q + j];
                            for k in 0..rows {
                                for l in 0..width {
                                    gi[k * m + j + dilation * l] +=
                                        d * vk.data[(p * rows + k) * width + l];
                                }
                            }
                        }
                    }
                }
                {
                    let gk = slot(grads, *kernels, vk.len());
                    for p in 0..outs {
                        for j in 0..q {
                            let d = go[p * q + j];
                            for k in 0..rows {
                                for l in 0..width {
                                    gk[(p * rows + k) * width + l] +=
                                        d * vi.data[k * m + j + dilation * l];
                                }
                            }
                        }
                    }
                }
                let gb = slot(grads, *biases, outs);
                for p in 0..outs {
                    gb[p] += go[p * q..(p + 1) * q].iter().sum::<f64>();
                }
            }
            Op::Sum(x) => {
                for g in slot(grads, *x, val(*x).len()).iter_mut() {
                    *g += go[0];
                }
            }
            Op::Nll(probs, target) => {
                let pv = val(*probs);
                let p = pv.data[*target];
                let gp = slot(grads, *probs, pv.len());
                if p > PROB_FLOOR {
                    gp[*target] -= go[0] / p;
                }
            }
        }
    }
}

/// Gradients of a loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, shaped like its value. Nodes the loss does not
    /// depend on get zeros.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Flat scalar view over a collection of trainable tensors.
pub trait ParameterSet {
    fn scalar_count(&self) -> usize;
    fn scalar(&self, index: usize) -> f64;
    fn set_scalar(&mut self, index: usize, value: f64);
    fn scalar_name(&self, index: usize) -> String;
}

impl ParameterSet for Vec<Tensor> {
    fn scalar_count(&self) -> usize {
        self.iter().map(Tensor::len).sum()
    }

    fn scalar(&self, index: usize) -> f64 {
        let (t, i) = locate(self.iter().map(Tensor::len), index);
        self[t].data[i]
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        let (t, i) = locate(self.iter().map(Tensor::len), index);
        self[t].data[i] = value;
    }

    fn scalar_name(&self, index: usize) -> String {
        let (t, i) = locate(self.iter().map(Tensor::len), index);
        format!("tensor{t}[{i}]")
    }
}

/// Maps a flat index onto `(tensor, offset)` given per-tensor lengths.
pub(crate) fn locate(lens: impl Iterator<Item = usize>, mut index: usize) -> (usize, usize) {
    for (t, len) in lens.enumerate() {
        if index < len {
            return (t, index);
        }
        index -= len;
    }
    panic!("flat parameter index out of range");
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter at which the worst error occurred.
    pub worst: Option<String>,
    pub sampled: usize,
}

/// Compares analytic gradients against central differences on a random sample
/// of scalar parameters.
///
/// `loss_and_grad` returns the loss and the flat analytic gradient (indexed
/// like [`ParameterSet::scalar`]). The relative error for one parameter is
/// `|a - b| / max(|a|, |b|, 1e-8)`; the worst over the sample is reported.
pub fn finite_diff_check<P, F>(
    params: &mut P,
    mut loss_and_grad: F,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: ParameterSet,
    F: FnMut(&P) -> Result<(f64, Vec<f64>)>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let n = params.scalar_count();
    if n == 0 || samples == 0 {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            sampled: 0,
        });
    }
    let (_, analytic) = loss_and_grad(params)?;
    if analytic.len() != n {
        return Err(Error::LengthMismatch {
            context: "analytic gradient",
            expected: n,
            found: analytic.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, samples.min(n));
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        sampled: picks.len(),
    };
    for idx in picks.iter() {
        let original = params.scalar(idx);
        params.set_scalar(idx, original + step);
        let plus = loss_and_grad(params).map(|r| r.0);
        params.set_scalar(idx, original - step);
        let minus = loss_and_grad(params).map(|r| r.0);
        params.set_scalar(idx, original);
        let (plus, minus) = (plus?, minus?);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                what: format!("in forward pass while perturbing {}", params.scalar_name(idx)),
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(params.scalar_name(idx));
        }
    }
    Ok(report)
}
