//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records every primitive as
//! a node holding its output, and replays the tape backwards once. Parameter
//! leaves read their values straight from the store, so many graphs can be
//! built over the same store concurrently.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels;
use crate::tensor::param::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Additive mask value for disallowed attention scores. Finite so tensors stay finite.
const MASKED: f64 = -1.0e30;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    CausalMask(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        x: Var,
        index: Vec<Option<usize>>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    DepthwiseConv {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// A graph with no parameter store, for standalone computations.
    pub fn standalone() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.params.expect("param node without store").value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if `v` required one.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.value(v).shape().to_vec(), g.clone()))
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t, false)
    }

    /// Differentiable free leaf; its gradient is readable via [`Graph::grad`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t, true)
    }

    /// Parameter leaf. Requires grad iff the parameter is trainable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let trainable = store.get(id).trainable;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        self.value(a).ensure_finite("matmul lhs")?;
        self.value(b).ensure_finite("matmul rhs")?;
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), Tensor::from_parts(shape, data), rg))
    }

    /// `x[..., n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(b).numel() != n {
            return Err(Error::dim(
                "add_row",
                format!("row length {n} vs bias {:?}", self.shape(b)),
            ));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddRow(x, b), Tensor::from_parts(shape, data), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), Tensor::from_parts(shape, data), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(Op::Scale(x, s), t, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::gelu);
        let rg = self.rg(x);
        self.push(Op::Gelu(x), t, rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let n = shape[axis];
        if n == 0 {
            return Err(Error::dim("softmax", "empty axis"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let out = kernels::softmax_strided(self.value(x).data(), outer, n, inner);
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax { x, outer, n, inner }, Tensor::from_parts(shape, out), rg))
    }

    /// Masks entries above the diagonal of a square score matrix.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("causal_mask")?;
        if n != m {
            return Err(Error::dim("causal_mask", format!("non-square [{n}x{m}]")));
        }
        let mut t = self.value(x).clone();
        let masked = T::of(MASKED);
        for i in 0..n {
            for j in i + 1..m {
                t.data_mut()[i * m + j] = masked;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::CausalMask(x), t, rg))
    }

    /// Per-row normalization over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 {
            return Err(Error::dim("layer_norm", "zero-width rows"));
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "row width {d}, gain {:?}, bias {:?}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let (out, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            d,
            eps,
        );
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            Tensor::from_parts(shape, out),
            rg,
        ))
    }

    /// Mean negative log-softmax of `targets` over rows of `logits[b×V]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, v) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != b {
            return Err(Error::dim(
                "cross_entropy",
                format!("{b} rows vs {} targets", targets.len()),
            ));
        }
        if b == 0 || v == 0 {
            return Err(Error::dim("cross_entropy", "empty logits"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                op: "cross_entropy",
                detail: format!("target {bad} out of range for {v} classes"),
            });
        }
        let lv = self.value(logits);
        let probs = kernels::softmax_rows(lv.data(), v);
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            total += kernels::log_sum_exp(row) - row[t];
        }
        let loss = total / T::from_usize(b).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Row gather; `None` entries produce zero rows (used for padding).
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let rows = xv.rows();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            match i {
                Some(i) if i < rows => data.extend_from_slice(xv.row(i)),
                Some(i) => {
                    return Err(Error::Index {
                        op: "gather_rows",
                        detail: format!("row {i} of {rows}"),
                    })
                }
                None => data.extend(std::iter::repeat_n(T::zero(), d)),
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            Tensor::from_parts(vec![index.len(), d], data),
            rg,
        ))
    }

    /// Embedding lookup: rows of `table[V×d]` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let index: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        self.gather_rows(table, &index)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let d = self.value(first).last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_rows")?;
            if c != d {
                return Err(Error::dim("concat_rows", format!("width {c} vs {d}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_parts(vec![rows, d], data),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (rows, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("rows {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![rows, total], data),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2("slice_rows")?;
        if start + len > rows {
            return Err(Error::dim("slice_rows", format!("{start}+{len} > {rows}")));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Op::SliceRows { x, start },
            Tensor::from_parts(vec![len, cols], data),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2("slice_cols")?;
        if start + len > cols {
            return Err(Error::dim("slice_cols", format!("{start}+{len} > {cols}")));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Op::SliceCols { x, start },
            Tensor::from_parts(vec![rows, len], data),
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("transpose")?;
        let data = kernels::transpose(self.value(x).data(), m, n);
        let rg = self.rg(x);
        Ok(self.push(Op::Transpose(x), Tensor::from_parts(vec![n, m], data), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), t, rg))
    }

    /// Same-padded depthwise 1-D convolution over rows of `x[T×C]` with
    /// per-channel kernels `w[K×C]` (K odd) and bias `b[C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t_len, c) = self.value(x).dims2("depthwise_conv1d")?;
        let (k, c2) = self.value(w).dims2("depthwise_conv1d")?;
        if c != c2 || self.value(b).numel() != c || k % 2 == 0 {
            return Err(Error::dim(
                "depthwise_conv1d",
                format!("x [{t_len}x{c}], w [{k}x{c2}], b {:?}", self.shape(b)),
            ));
        }
        let pad = k / 2;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(t_len * c);
        for _ in 0..t_len {
            out.extend_from_slice(bv);
        }
        for t in 0..t_len {
            for kk in 0..k {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src as usize >= t_len {
                    continue;
                }
                let src = src as usize;
                for ch in 0..c {
                    out[t * c + ch] += wv[kk * c + ch] * xv[src * c + ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Op::DepthwiseConv { x, w, b },
            Tensor::from_parts(vec![t_len, c], out),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::from_usize(v.numel().max(1)).unwrap();
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(s), rg)
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Backpropagates from the scalar `loss`; returns gradients of every
    /// trainable parameter reachable from it. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads, &mut out);
            grads[i] = Some(dy);
        }
        self.grads = grads;
        Ok(out)
    }

    fn backprop_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.value(v).numel();
            let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(g);
        };

        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => {
                let t = Tensor::from_parts(self.value(Var(i)).shape().to_vec(), dy.to_vec());
                out.map.insert(*id, t);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").unwrap();
                let n = self.value(*b).last_dim();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| kernels::matmul_nt_acc(dy, bv, g, m, k, n));
                acc(*b, &mut |g| kernels::matmul_tn_acc(av, dy, g, m, k, n));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| add_into(g, dy));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |g| add_into(g, dy));
                let n = self.value(*b).numel();
                acc(*b, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                acc(*x, &mut |g| {
                    for (g, &d) in g.iter_mut().zip(dy) {
                        *g += d * s;
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d * kernels::gelu_grad(v);
                    }
                });
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = self.value(Var(i)).data();
                let (outer, n, inner) = (*outer, *n, *inner);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let base = o * n * inner + j;
                            let mut dot = T::zero();
                            for r in 0..n {
                                let idx = base + r * inner;
                                dot += dy[idx] * y[idx];
                            }
                            for r in 0..n {
                                let idx = base + r * inner;
                                g[idx] += y[idx] * (dy[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::CausalMask(x) => {
                let (n, m) = self.value(*x).dims2("causal_mask").unwrap();
                acc(*x, &mut |g| {
                    for r in 0..n {
                        for c in 0..=r.min(m - 1) {
                            g[r * m + c] += dy[r * m + c];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.value(*x).last_dim();
                let gv = self.value(*gain).data();
                let dn = T::from_usize(d).unwrap();
                acc(*x, &mut |g| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let dyr = &dy[row.clone()];
                        let xh = &xhat[row.clone()];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = dyr[j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= dn;
                        mean_dxh_xh /= dn;
                        for j in 0..d {
                            let dxh = dyr[j] * gv[j];
                            g[r * d + j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (row_dy, row_xh) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += row_dy[j] * row_xh[j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for row in dy.chunks(d) {
                        add_into(g, row);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).last_dim();
                let scale = dy[0] / T::from_usize(targets.len()).unwrap();
                acc(*logits, &mut |g| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..v {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            g[r * v + c] += (probs[r * v + c] - onehot) * scale;
                        }
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let d = self.value(*x).last_dim();
                acc(*x, &mut |g| {
                    for (r, src) in index.iter().enumerate() {
                        if let Some(s) = src {
                            add_into(&mut g[s * d..(s + 1) * d], &dy[r * d..(r + 1) * d]);
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let slice = &dy[offset..offset + n];
                    acc(p, &mut |g| add_into(g, slice));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.value(Var(i)).last_dim();
                let mut col = 0;
                for &p in parts {
                    let (rows, w) = self.value(p).dims2("concat_cols").unwrap();
                    acc(p, &mut |g| {
                        for r in 0..rows {
                            add_into(&mut g[r * w..(r + 1) * w], &dy[r * total + col..r * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).last_dim();
                let off = start * cols;
                acc(*x, &mut |g| add_into(&mut g[off..off + dy.len()], dy));
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).last_dim();
                let w = self.value(Var(i)).last_dim();
                let start = *start;
                acc(*x, &mut |g| {
                    for (r, row) in dy.chunks(w).enumerate() {
                        add_into(&mut g[r * cols + start..r * cols + start + w], row);
                    }
                });
            }
            Op::Transpose(x) => {
                let (m, n) = self.value(*x).dims2("transpose").unwrap();
                let back = kernels::transpose(dy, n, m);
                acc(*x, &mut |g| add_into(g, &back));
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, dy)),
            Op::DepthwiseConv { x, w, b } => {
                let (t_len, c) = self.value(*x).dims2("depthwise_conv1d").unwrap();
                let k = self.value(*w).numel() / c;
                let pad = k / 2;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let taps = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for t in 0..t_len {
                        for kk in 0..k {
                            let src = t as isize + kk as isize - pad as isize;
                            if src >= 0 && (src as usize) < t_len {
                                f(t, kk, src as usize);
                            }
                        }
                    }
                };
                acc(*x, &mut |g| {
                    taps(&mut |t, kk, src| {
                        for ch in 0..c {
                            g[src * c + ch] += wv[kk * c + ch] * dy[t * c + ch];
                        }
                    })
                });
                acc(*w, &mut |g| {
                    taps(&mut |t, kk, src| {
                        for ch in 0..c {
                            g[kk * c + ch] += xv[src * c + ch] * dy[t * c + ch];
                        }
                    })
                });
                acc(*b, &mut |g| {
                    for row in dy.chunks(c) {
                        add_into(g, row);
                    }
                });
            }
            Op::Sum(x) => {
                let d = dy[0];
                acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += d));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1);
                let d = dy[0] / T::from_usize(n).unwrap();
                acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += d));
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
