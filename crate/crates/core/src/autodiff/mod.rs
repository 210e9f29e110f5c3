//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations are recorded in creation order on a [`Tape`], which is therefore
//! already a topological order of the graph. [`Tape::backward`] walks it once
//! in reverse and returns the adjoint of every node that requires a gradient.
//!
//! Convolutions are cross-correlations (`y[i] = Σ_k f[k]·x[i·s + k]`); callers
//! that need the classical orientation flip the filter with [`Tape::permute`].
//!
//! ```
//! use wavegru::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

pub mod kernels;
mod perm;
mod tensor;

pub use kernels::Boundary;
pub use perm::Permutation;
pub use tensor::Tensor;

use std::rc::Rc;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    stride: usize,
    boundary: Boundary,
    batch: usize,
    len: usize,
    out_len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    AddBias(Var, Var),
    DiagScale(Var, Var),
    Permute(Var, Permutation),
    Conv(Var, Var, ConvSpec),
    ConvT(Var, Var, ConvSpec),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    PolyMul(Var, Var),
    Sum(Var),
    Mse(Var, Var),
    SoftmaxCe(Var, Rc<[f64]>, Rc<[usize]>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires a gradient
    /// and the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(op, self.shape(v), &[0, 0])),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shapes checked");
        let rg = self.rg(&[a, b]);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(op, value, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Adds a bias vector `[c]` to every row of `x[r×c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.shape(bias) != [c] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), value, rg))
    }

    /// Row-wise diagonal scaling `y = d ⊙ x` for `x` of shape `[n]` or `[r×n]`.
    pub fn diag_scale(&mut self, x: Var, d: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(d) != [n] {
            return Err(Error::dim("diag_scale", self.shape(x), self.shape(d)));
        }
        let dv = self.value(d).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, s) in row.iter_mut().zip(dv) {
                *v *= s;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x, d]);
        Ok(self.push(Op::DiagScale(x, d), value, rg))
    }

    /// Permutes the last axis: `y[.., i] = x[.., perm[i]]`.
    pub fn permute(&mut self, x: Var, perm: &Permutation) -> Result<Var> {
        let n = self.value(x).cols();
        if perm.len() != n {
            return Err(Error::dim("permute", self.shape(x), &[perm.len()]));
        }
        let data: Vec<f64> = self.value(x).data().chunks(n).flat_map(|row| perm.apply(row)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Permute(x, perm.clone()), value, rg))
    }

    fn signal_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [len] => Ok((1, len)),
            [b, len] => Ok((b, len)),
            _ => Err(Error::dim(op, self.shape(x), &[0])),
        }
    }

    fn filter_len(&self, op: &'static str, f: Var) -> Result<usize> {
        match *self.shape(f) {
            [l] if l > 0 => Ok(l),
            _ => Err(Error::dim(op, self.shape(f), &[0])),
        }
    }

    fn reshape_like(&self, x: Var, batch: usize, len: usize, data: Vec<f64>) -> Result<Tensor> {
        if self.shape(x).len() == 1 {
            Tensor::new(vec![len], data)
        } else {
            Tensor::new(vec![batch, len], data)
        }
    }

    /// Strided cross-correlation of each row of `x[batch×len]` with `filter[L]`.
    pub fn conv1d_strided(&mut self, x: Var, filter: Var, stride: usize, boundary: Boundary) -> Result<Var> {
        let (batch, len) = self.signal_dims("conv1d_strided", x)?;
        let taps = self.filter_len("conv1d_strided", filter)?;
        if stride == 0 {
            return Err(Error::invalid("conv1d_strided: stride must be at least 1"));
        }
        let out_len = kernels::conv_out_len(len, taps, stride, boundary).ok_or_else(|| {
            Error::Degenerate(format!(
                "conv1d_strided: length {len} cannot be filtered by {taps} taps at stride {stride} ({boundary:?})"
            ))
        })?;
        let spec = ConvSpec { stride, boundary, batch, len, out_len };
        let out = kernels::conv_forward(
            self.value(x).data(),
            batch,
            len,
            self.value(filter).data(),
            stride,
            boundary,
            out_len,
        );
        let value = self.reshape_like(x, batch, out_len, out)?;
        let rg = self.rg(&[x, filter]);
        Ok(self.push(Op::Conv(x, filter, spec), value, rg))
    }

    /// Transposed strided convolution, the adjoint of [`Tape::conv1d_strided`],
    /// producing rows of length `out_len`.
    pub fn conv1d_transposed_strided(
        &mut self,
        y: Var,
        filter: Var,
        stride: usize,
        boundary: Boundary,
        out_len: usize,
    ) -> Result<Var> {
        let (batch, ylen) = self.signal_dims("conv1d_transposed_strided", y)?;
        let taps = self.filter_len("conv1d_transposed_strided", filter)?;
        if kernels::conv_out_len(out_len, taps, stride, boundary) != Some(ylen) {
            return Err(Error::dim("conv1d_transposed_strided", self.shape(y), &[batch, out_len]));
        }
        let spec = ConvSpec { stride, boundary, batch, len: out_len, out_len: ylen };
        let out = kernels::conv_transpose(
            self.value(y).data(),
            batch,
            ylen,
            self.value(filter).data(),
            stride,
            boundary,
            out_len,
        );
        let value = self.reshape_like(y, batch, out_len, out)?;
        let rg = self.rg(&[y, filter]);
        Ok(self.push(Op::ConvT(y, filter, spec), value, rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows || self.shape(p).len() != self.shape(first).len() {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            total += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if self.shape(first).len() == 1 { vec![total] } else { vec![rows, total] };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows: no inputs"))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 2 || self.value(p).cols() != cols {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += self.value(p).rows();
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    /// Columns `start..start+len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.value(x).cols();
        if start + len > cols || len == 0 {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let data: Vec<f64> =
            self.value(x).data().chunks(cols).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let shape = if self.shape(x).len() == 1 { vec![len] } else { vec![self.value(x).rows(), len] };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceCols(x, start), value, rg))
    }

    /// Full linear convolution of two 1-D coefficient vectors.
    pub fn poly_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let la = self.filter_len("poly_mul", a)?;
        let lb = self.filter_len("poly_mul", b)?;
        let out = kernels::poly_mul(self.value(a).data(), self.value(b).data());
        debug_assert_eq!(out.len(), la + lb - 1);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::PolyMul(a, b), Tensor::vector(out), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let p = self.value(pred);
        let t = self.value(target);
        let n = p.len().max(1) as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(s / n), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if labels.len() != rows {
            return Err(Error::dim("softmax_cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p /= denom;
            }
            loss += denom.ln() + max - row[labels[r]];
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Op::SoftmaxCe(logits, probs.into(), labels.into()), Tensor::scalar(loss / rows.max(1) as f64), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns fresh adjoints on every call; accumulating across calls is the
    /// job of [`crate::params::ParamStore::accumulate`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { adjoints: adj });
        }
        adj[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj);
            // Interior adjoints are kept so callers can inspect them.
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let like =
            |v: Var, data: Vec<f64>| Tensor::new(self.nodes[v.0].value.shape().to_vec(), data).expect("grad shape");
        let gd = g.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if wants(*a) {
                    send(*a, like(*a, kernels::matmul_bt(gd, val(*b).data(), m, n, k)));
                }
                if wants(*b) {
                    send(*b, like(*b, kernels::matmul_at(val(*a).data(), gd, m, k, n)));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d = gd.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    send(*a, like(*a, d));
                }
                if wants(*b) {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    send(*b, like(*b, d));
                }
            }
            Op::Scale(x, s) => send(*x, g.map(|v| v * s)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Sigmoid(x) => {
                let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                send(*x, like(*x, d));
            }
            Op::Tanh(x) => {
                let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                send(*x, like(*x, d));
            }
            Op::Relu(x) => {
                let d = gd.iter().zip(val(*x).data()).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                send(*x, like(*x, d));
            }
            Op::AddBias(x, b) => {
                send(*x, g.clone());
                if wants(*b) {
                    let c = val(*b).len();
                    let mut gb = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*b, Tensor::vector(gb));
                }
            }
            Op::DiagScale(x, d) => {
                let n = val(*d).len();
                let dv = val(*d).data();
                if wants(*x) {
                    let gx = gd.chunks(n).flat_map(|row| row.iter().zip(dv).map(|(g, s)| g * s)).collect();
                    send(*x, like(*x, gx));
                }
                if wants(*d) {
                    let mut gdg = vec![0.0; n];
                    for (grow, xrow) in gd.chunks(n).zip(val(*x).data().chunks(n)) {
                        for ((acc, g), xv) in gdg.iter_mut().zip(grow).zip(xrow) {
                            *acc += g * xv;
                        }
                    }
                    send(*d, Tensor::vector(gdg));
                }
            }
            Op::Permute(x, perm) => {
                let n = perm.len();
                let gx = gd.chunks(n).flat_map(|row| perm.apply_inverse(row)).collect();
                send(*x, like(*x, gx));
            }
            Op::Conv(x, f, s) => {
                if wants(*x) {
                    let gx =
                        kernels::conv_transpose(gd, s.batch, s.out_len, val(*f).data(), s.stride, s.boundary, s.len);
                    send(*x, like(*x, gx));
                }
                if wants(*f) {
                    let gf = kernels::conv_filter_grad(
                        val(*x).data(),
                        s.batch,
                        s.len,
                        gd,
                        s.out_len,
                        val(*f).len(),
                        s.stride,
                    );
                    send(*f, Tensor::vector(gf));
                }
            }
            Op::ConvT(y, f, s) => {
                if wants(*y) {
                    let gy = kernels::conv_forward(gd, s.batch, s.len, val(*f).data(), s.stride, s.boundary, s.out_len);
                    send(*y, like(*y, gy));
                }
                if wants(*f) {
                    let gf = kernels::conv_filter_grad(
                        gd,
                        s.batch,
                        s.len,
                        val(*y).data(),
                        s.out_len,
                        val(*f).len(),
                        s.stride,
                    );
                    send(*f, Tensor::vector(gf));
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if wants(p) {
                        let gp = gd.chunks(total).flat_map(|row| row[offset..offset + c].iter().copied()).collect();
                        send(p, like(p, gp));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        send(p, like(p, gd[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let cols = val(*x).cols();
                let len = node.value.cols();
                let mut gx = vec![0.0; val(*x).len()];
                for (dst, src) in gx.chunks_mut(cols).zip(gd.chunks(len)) {
                    dst[*start..*start + len].copy_from_slice(src);
                }
                send(*x, like(*x, gx));
            }
            Op::PolyMul(a, b) => {
                if wants(*a) {
                    let ga = kernels::poly_mul_grad(gd, val(*b).data(), val(*a).len());
                    send(*a, Tensor::vector(ga));
                }
                if wants(*b) {
                    let gb = kernels::poly_mul_grad(gd, val(*a).data(), val(*b).len());
                    send(*b, Tensor::vector(gb));
                }
            }
            Op::Sum(x) => {
                let s = g.item();
                send(*x, Tensor::full(val(*x).shape(), s));
            }
            Op::Mse(p, t) => {
                let s = g.item() * 2.0 / val(*p).len().max(1) as f64;
                let diff: Vec<f64> = val(*p).data().iter().zip(val(*t).data()).map(|(a, b)| s * (a - b)).collect();
                if wants(*t) {
                    send(*t, like(*t, diff.iter().map(|v| -v).collect()));
                }
                send(*p, like(*p, diff));
            }
            Op::SoftmaxCe(z, probs, labels) => {
                let classes = val(*z).cols();
                let s = g.item() / labels.len().max(1) as f64;
                let mut gz: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gz[r * classes + l] -= s;
                }
                send(*z, like(*z, gz));
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let c = t.constant(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let q = t.matmul(m, c).unwrap();
        assert_eq!(t.value(q).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv_haar_hand_case() {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0; 4]));
        let f = t.constant(Tensor::vector(vec![a, a]));
        let y = t.conv1d_strided(x, f, 2, Boundary::Valid).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        assert!(t.value(y).data().iter().all(|&v| approx(v, s2, 1e-15)));
        assert_eq!(t.value(y).len(), 2);

        let b = t.constant(Tensor::vector(vec![s2, s2]));
        let r = t.conv1d_transposed_strided(b, f, 2, Boundary::Valid, 4).unwrap();
        assert!(t.value(r).data().iter().all(|&v| approx(v, 1.0, 1e-15)));
    }

    #[test]
    fn identity_filter_stride_one() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let f = t.constant(Tensor::vector(vec![1.0]));
        for boundary in [Boundary::Valid, Boundary::Circular] {
            let y = t.conv1d_strided(x, f, 1, boundary).unwrap();
            assert_eq!(t.value(y), t.value(x));
        }
    }

    #[test]
    fn conv_rejects_short_input() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0; 3]));
        let f = t.constant(Tensor::vector(vec![1.0; 4]));
        assert!(matches!(t.conv1d_strided(x, f, 2, Boundary::Valid), Err(Error::Degenerate(_))));
        let y = t.constant(Tensor::vector(vec![1.0; 3]));
        let f2 = t.constant(Tensor::vector(vec![1.0; 2]));
        assert!(matches!(t.conv1d_transposed_strided(y, f2, 2, Boundary::Circular, 8), Err(Error::Dimension { .. })));
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        let h = t.tanh(z);
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(t.value(h).item(), 0.0);
    }

    #[test]
    fn permute_traces() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![10.0, 20.0, 30.0]));
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let y = t.permute(x, &p).unwrap();
        assert_eq!(t.value(y).data(), &[30.0, 10.0, 20.0]);
        let back = t.permute(y, &p.inverse()).unwrap();
        assert_eq!(t.value(back), t.value(x));
        let id = t.permute(x, &Permutation::identity(3)).unwrap();
        assert_eq!(t.value(id), t.value(x));
    }

    #[test]
    fn diag_scale_hand_case() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let d = t.constant(Tensor::vector(vec![2.0, 3.0]));
        let y = t.diag_scale(x, d).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 3.0]);
        let ones = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let same = t.diag_scale(d, ones).unwrap();
        assert_eq!(t.value(same), t.value(d));
        let bad = t.constant(Tensor::vector(vec![1.0; 3]));
        assert!(t.diag_scale(x, bad).is_err());
    }

    #[test]
    fn loss_values() {
        let mut t = Tape::new();
        let y = t.constant(Tensor::matrix(2, 1, vec![0.3, -1.0]).unwrap());
        let m = t.mse(y, y).unwrap();
        assert_eq!(t.value(m).item(), 0.0);
        let p = t.constant(Tensor::vector(vec![1.0]));
        let q = t.constant(Tensor::vector(vec![0.5]));
        let m2 = t.mse(p, q).unwrap();
        assert_eq!(t.value(m2).item(), 0.25);

        let logits = t.constant(Tensor::zeros(&[3, 9]));
        let ce = t.softmax_cross_entropy(logits, &[0, 4, 8]).unwrap();
        assert!(approx(t.value(ce).item(), 9f64.ln(), 1e-12));
        assert!(matches!(t.softmax_cross_entropy(logits, &[0, 9, 1]), Err(Error::Validation(_))));
    }

    #[test]
    fn square_derivative_and_constant_loss() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);

        let mut t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let zero = t.scale(w, 0.0);
        let loss = t.sum(zero);
        let g = t.backward(loss).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_input_accumulates_both_paths() {
        // y = x*x + 3x at x=2 → dy/dx = 2x + 3 = 7
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let sq = t.mul(x, x).unwrap();
        let lin = t.scale(x, 3.0);
        let y = t.add(sq, lin).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }
}
