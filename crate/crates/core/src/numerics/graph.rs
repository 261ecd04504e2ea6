//! Dynamically recorded computation graph with reverse-mode gradients.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only; parameter nodes reference the
//! store instead of copying it, so graphs are cheap to build per utterance or per
//! decoding step. Nodes are appended in evaluation order, which makes the node
//! list a topological order and lets [`Graph::backward`] run as a single reverse
//! sweep.

use rand::Rng;

use super::kernels::{self, sigmoid};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    StackRows(Vec<Var>),
    OuterSum { a: Var, b: Var },
    WeightedSum { weights: Var, rows: Var },
    Conv1d { x: Var, kernel: Var, bias: Var, pad: usize },
    Dropout { x: Var, mask: Vec<f64> },
    LstmCell { pre: Var, c: Var },
    Scatter { x: Var, entries: Vec<(usize, usize)> },
    Reshape(Var),
    ExternalLoss { x: Var, grad: Vec<f64> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Backward {
    grads: Vec<Option<Vec<f64>>>,
}

impl Backward {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn out_shape(x: &Tensor, cols: usize) -> Vec<usize> {
    if x.shape().len() == 1 {
        vec![cols]
    } else {
        vec![x.rows(), cols]
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node has a value"),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that does not participate in differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A free leaf whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `x W^T + b` applied to each row of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 {
            return shape_err("linear", format!("weight must be 2-D, got {:?}", wv.shape()));
        }
        let (n, k) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != k {
            return shape_err(
                "linear",
                format!("input width {} does not match weight columns {k}", xv.cols()),
            );
        }
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.len() != n {
                    return shape_err(
                        "linear",
                        format!("bias length {} does not match weight rows {n}", bv.len()),
                    );
                }
                Some(bv.data())
            }
            None => None,
        };
        let data = kernels::linear_forward(xv.data(), xv.rows(), wv.data(), n, bias);
        let shape = out_shape(xv, n);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(Tensor::new(shape, data)?, Op::Linear { x, w, b }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    fn rowwise(&mut self, x: Var, name: &'static str, f: fn(&[f64]) -> Vec<f64>) -> Result<Tensor> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(crate::error::Error::Empty(name));
        }
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            data.extend(f(xv.row(r)));
        }
        Tensor::new(xv.shape().to_vec(), data)
    }

    /// Softmax over the last extent, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.rowwise(x, "softmax", kernels::softmax_row)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// `x - max - log(sum(exp(x - max)))` over the last extent.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.rowwise(x, "log_softmax", kernels::log_softmax_row)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Concatenation along the last extent; all inputs need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(crate::error::Error::Empty("concat"));
        }
        let first = self.value(parts[0]);
        let rows = first.rows();
        let one_d = first.shape().len() == 1;
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows || (pv.shape().len() == 1) != one_d {
                return shape_err("concat", format!("{:?} vs {:?}", first.shape(), pv.shape()));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if one_d { vec![total] } else { vec![rows, total] };
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start+len` of every row.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.cols() {
            return shape_err("slice", format!("{start}..{} of width {}", start + len, xv.cols()));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let shape = out_shape(xv, len);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, start, len }, rg))
    }

    fn gather_rows(&mut self, x: Var, rows: Vec<usize>, squeeze: bool) -> Result<Var> {
        let xv = self.value(x);
        if rows.is_empty() {
            return Err(crate::error::Error::Empty("select_rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return shape_err("select_rows", format!("row {bad} of {}", xv.rows()));
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let shape = if squeeze { vec![c] } else { vec![rows.len(), c] };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SelectRows { x, rows }, rg))
    }

    /// Row `i` as a 1-D tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.gather_rows(x, vec![i], true)
    }

    /// Rows at `indices`, in order, as a 2-D tensor.
    pub fn select_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.gather_rows(x, indices, false)
    }

    /// Stacks equal-width tensors as the rows of a matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(crate::error::Error::Empty("stack_rows"));
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return shape_err("stack_rows", format!("width {} vs {c}", pv.cols()));
            }
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / c;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::StackRows(parts.to_vec()), rg))
    }

    /// `out[i * B + j] = a[i] + b[j]` for `a: [A x d]`, `b: [B x d]`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return shape_err("outer_sum", format!("width {} vs {}", av.cols(), bv.cols()));
        }
        let d = av.cols();
        let mut data = Vec::with_capacity(av.rows() * bv.rows() * d);
        for i in 0..av.rows() {
            let ar = av.row(i);
            for j in 0..bv.rows() {
                data.extend(ar.iter().zip(bv.row(j)).map(|(x, y)| x + y));
            }
        }
        let shape = vec![av.rows() * bv.rows(), d];
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::OuterSum { a, b }, rg))
    }

    /// `sum_i weights[i] * rows[i, :]`.
    pub fn weighted_sum(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let (wv, rv) = (self.value(weights), self.value(rows));
        if wv.len() != rv.rows() || rv.shape().len() != 2 {
            return shape_err(
                "weighted_sum",
                format!("{} weights for rows of {:?}", wv.len(), rv.shape()),
            );
        }
        let mut out = vec![0.0; rv.cols()];
        for (i, &w) in wv.data().iter().enumerate() {
            kernels::axpy(w, rv.row(i), &mut out);
        }
        let rg = self.rg(&[weights, rows]);
        Ok(self.push(Tensor::vector(out), Op::WeightedSum { weights, rows }, rg))
    }

    /// Same-length 1-D convolution of `x: [N]` with `kernel: [C x K]` and
    /// `bias: [C]`, zero padded; output `[N x C]`. `K` must be odd.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        if kv.shape().len() != 2 {
            return shape_err("conv1d", format!("kernel must be [channels x size], got {:?}", kv.shape()));
        }
        let (c, k) = (kv.shape()[0], kv.shape()[1]);
        if k % 2 == 0 {
            return arg_err("conv1d", format!("kernel size {k} is even; same-length padding is ambiguous"));
        }
        if bv.len() != c {
            return shape_err("conv1d", format!("bias length {} for {c} channels", bv.len()));
        }
        if xv.shape().len() != 1 {
            return shape_err("conv1d", format!("input must be 1-D, got {:?}", xv.shape()));
        }
        let n = xv.len();
        let pad = (k - 1) / 2;
        let mut data = vec![0.0; n * c];
        for i in 0..n {
            for ch in 0..c {
                let mut s = bv.data()[ch];
                for j in 0..k {
                    let src = i + j;
                    if src >= pad && src - pad < n {
                        s += kv.data()[ch * k + j] * xv.data()[src - pad];
                    }
                }
                data[i * c + ch] = s;
            }
        }
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![n, c], data)?,
            Op::Conv1d { x, kernel, bias, pad },
            rg,
        ))
    }

    /// Inverted dropout: in training, zero each element with probability `p`
    /// and scale survivors by `1/(1-p)`; otherwise the input node is returned.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return arg_err("dropout", format!("probability {p} outside [0, 1)"));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Fused LSTM cell. `pre` holds gate pre-activations in (input, forget,
    /// cell, output) order; the result is `[h', c']` of width `2h`.
    pub fn lstm_cell(&mut self, pre: Var, c: Var) -> Result<Var> {
        let (pv, cv) = (self.value(pre), self.value(c));
        let h = cv.len();
        if pv.len() != 4 * h || pv.shape().len() != 1 || cv.shape().len() != 1 {
            return shape_err(
                "lstm_cell",
                format!("pre-activations {:?} for cell state {:?}", pv.shape(), cv.shape()),
            );
        }
        let (p, cd) = (pv.data(), cv.data());
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i_g = sigmoid(p[j]);
            let f_g = sigmoid(p[h + j]);
            let g_g = p[2 * h + j].tanh();
            let o_g = sigmoid(p[3 * h + j]);
            let c_new = f_g * cd[j] + i_g * g_g;
            out[j] = o_g * c_new.tanh();
            out[h + j] = c_new;
        }
        let rg = self.rg(&[pre, c]);
        Ok(self.push(Tensor::vector(out), Op::LstmCell { pre, c }, rg))
    }

    /// `out[k] = sum of x[i] over entries (i, k)`; a 1-D result of length `size`.
    pub fn scatter(&mut self, x: Var, entries: Vec<(usize, usize)>, size: usize) -> Result<Var> {
        let xv = self.value(x);
        let mut out = vec![0.0; size];
        for &(i, k) in &entries {
            if i >= xv.len() || k >= size {
                return shape_err("scatter", format!("entry ({i}, {k}) for input {} into {size}", xv.len()));
            }
            out[k] += xv.data()[i];
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Scatter { x, entries }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// A scalar loss computed outside the graph, whose gradient with respect
    /// to `x` is already known.
    pub fn external_loss(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return shape_err(
                "external_loss",
                format!("gradient length {} for input of {}", grad.len(), self.value(x).len()),
            );
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::ExternalLoss { x, grad }, rg))
    }

    /// Reverse sweep from a scalar node. Gradients from every use of a node are
    /// summed.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        if !self.value(loss).is_scalar() {
            return arg_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Param(_) | Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Backward { grads })
    }

    /// Adds the gradients of every parameter node into `out`.
    pub fn accumulate_param_grads(&self, back: &Backward, out: &mut Gradients) {
        for (pid, slot) in self.param_nodes.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = back.wrt(*v) {
                    kernels::axpy(1.0, g, out.get_mut(ParamId(pid)));
                }
            }
        }
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.nodes[idx].value.as_ref().unwrap();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &self.nodes[idx].op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let rows = xv.rows();
                let n = wv.shape()[0];
                acc(*x, &mut |g| kernels::linear_backward_input(gy, rows, wv.data(), n, g));
                acc(*w, &mut |g| kernels::linear_backward_weight(gy, rows, xv.data(), n, g));
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for r in 0..rows {
                            kernels::axpy(1.0, &gy[r * n..(r + 1) * n], g);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| kernels::axpy(1.0, gy, g));
                acc(*b, &mut |g| kernels::axpy(1.0, gy, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| kernels::axpy(1.0, gy, g));
                acc(*b, &mut |g| kernels::axpy(-1.0, gy, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bv[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * av[i];
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |g| kernels::axpy(*f, gy, g)),
            Op::Tanh(x) => acc(*x, &mut |g| {
                for (i, yi) in y.data().iter().enumerate() {
                    g[i] += gy[i] * (1.0 - yi * yi);
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |g| {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            g[i] += gy[i];
                        }
                    }
                })
            }
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for (i, yi) in y.data().iter().enumerate() {
                    g[i] += gy[i] * yi * (1.0 - yi);
                }
            }),
            Op::Softmax(x) => {
                let c = y.cols();
                acc(*x, &mut |g| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gy[r * c..(r + 1) * c];
                        let d = kernels::dot(gr, yr);
                        for j in 0..c {
                            g[r * c + j] += yr[j] * (gr[j] - d);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                acc(*x, &mut |g| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gy[r * c..(r + 1) * c];
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            g[r * c + j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |g| {
                for v in g.iter_mut() {
                    *v += gy[0];
                }
            }),
            Op::Concat(parts) => {
                let total = y.cols();
                let rows = y.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    acc(*p, &mut |g| {
                        for r in 0..rows {
                            kernels::axpy(
                                1.0,
                                &gy[r * total + offset..r * total + offset + w],
                                &mut g[r * w..(r + 1) * w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { x, start, len } => {
                let w = self.value(*x).cols();
                let rows = y.rows();
                acc(*x, &mut |g| {
                    for r in 0..rows {
                        kernels::axpy(
                            1.0,
                            &gy[r * len..(r + 1) * len],
                            &mut g[r * w + start..r * w + start + len],
                        );
                    }
                })
            }
            Op::SelectRows { x, rows } => {
                let c = y.cols();
                acc(*x, &mut |g| {
                    for (o, &r) in rows.iter().enumerate() {
                        kernels::axpy(1.0, &gy[o * c..(o + 1) * c], &mut g[r * c..(r + 1) * c]);
                    }
                })
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |g| kernels::axpy(1.0, &gy[offset..offset + n], g));
                    offset += n;
                }
            }
            Op::OuterSum { a, b } => {
                let (ar, br) = (self.value(*a).rows(), self.value(*b).rows());
                let d = y.cols();
                acc(*a, &mut |g| {
                    for i in 0..ar {
                        for j in 0..br {
                            let o = (i * br + j) * d;
                            kernels::axpy(1.0, &gy[o..o + d], &mut g[i * d..(i + 1) * d]);
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..ar {
                        for j in 0..br {
                            let o = (i * br + j) * d;
                            kernels::axpy(1.0, &gy[o..o + d], &mut g[j * d..(j + 1) * d]);
                        }
                    }
                });
            }
            Op::WeightedSum { weights, rows } => {
                let (wv, rv) = (self.value(*weights), self.value(*rows));
                let d = rv.cols();
                acc(*weights, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += kernels::dot(gy, rv.row(i));
                    }
                });
                acc(*rows, &mut |g| {
                    for (i, &w) in wv.data().iter().enumerate() {
                        kernels::axpy(w, gy, &mut g[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::Conv1d { x, kernel, bias, pad } => {
                let (xv, kv) = (self.value(*x).data(), self.value(*kernel));
                let (c, k) = (kv.shape()[0], kv.shape()[1]);
                let n = xv.len();
                let pad = *pad;
                acc(*x, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..k {
                                let src = i + j;
                                if src >= pad && src - pad < n {
                                    g[src - pad] += gy[i * c + ch] * kv.data()[ch * k + j];
                                }
                            }
                        }
                    }
                });
                acc(*kernel, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..k {
                                let src = i + j;
                                if src >= pad && src - pad < n {
                                    g[ch * k + j] += gy[i * c + ch] * xv[src - pad];
                                }
                            }
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            g[ch] += gy[i * c + ch];
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |g| {
                for i in 0..g.len() {
                    g[i] += gy[i] * mask[i];
                }
            }),
            Op::LstmCell { pre, c } => {
                let (p, cd) = (self.value(*pre).data(), self.value(*c).data());
                let h = cd.len();
                let out = y.data();
                let mut dpre = vec![0.0; 4 * h];
                let mut dc_prev = vec![0.0; h];
                for j in 0..h {
                    let i_g = sigmoid(p[j]);
                    let f_g = sigmoid(p[h + j]);
                    let g_g = p[2 * h + j].tanh();
                    let o_g = sigmoid(p[3 * h + j]);
                    let c_new = out[h + j];
                    let tc = c_new.tanh();
                    let dh = gy[j];
                    let dc = gy[h + j] + dh * o_g * (1.0 - tc * tc);
                    dpre[j] = dc * g_g * i_g * (1.0 - i_g);
                    dpre[h + j] = dc * cd[j] * f_g * (1.0 - f_g);
                    dpre[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dpre[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_prev[j] = dc * f_g;
                }
                acc(*pre, &mut |g| kernels::axpy(1.0, &dpre, g));
                acc(*c, &mut |g| kernels::axpy(1.0, &dc_prev, g));
            }
            Op::Scatter { x, entries } => acc(*x, &mut |g| {
                for &(i, k) in entries {
                    g[i] += gy[k];
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |g| kernels::axpy(1.0, gy, g)),
            Op::ExternalLoss { x, grad } => acc(*x, &mut |g| kernels::axpy(gy[0], grad, g)),
        }
    }
}
