// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every intermediate value of one computation. Operations
//! evaluate eagerly and, when any input requires a gradient, record enough
//! state on the tape to run their backward rule. A tape is single-owner;
//! build a fresh one per forward pass.

use crate::error::{invalid, Result, TensorError};
use crate::kernels::{self, AttnShape, NormCache};
use crate::scalar::{MatRef, Scalar};
use crate::tensor::{check_targets, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Option<Var>,
        cache: NormCache,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        cache: NormCache,
    },
    Rope {
        x: Var,
        shape: AttnShape,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<S>,
    },
    HeadMean {
        x: Var,
        heads: usize,
        head: usize,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
    Mean(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

#[derive(Debug)]
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    record: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    /// Tape that records operations for a later [`Graph::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// Tape that only evaluates; nothing is differentiable.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. Gradients are tracked only when `requires_grad` and the
    /// tape is recording.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.record;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last backward pass, if the value took part.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.record && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records `op` only when a gradient can flow through it.
    fn emit(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<S>, inputs: &[Var], op: Op<S>) -> Result<Var> {
        let value = Tensor::from_op(name, shape, data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(value, if rg { op } else { Op::Leaf }, rg))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| invalid(op, format!("expected rank-2 input, got {:?}", self.value(v).shape())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.emit("matmul", vec![m, n], out, &[a, b], Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| *x + *y).collect();
        let shape = va.shape().to_vec();
        self.emit("add", shape, out, &[a, b], Op::Add(a, b))
    }

    /// Adds a length-`cols` vector to every row of a `(rows, cols)` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "add_row")?;
        let b = self.value(bias);
        if b.numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: vec![rows, cols],
                rhs: b.shape().to_vec(),
            });
        }
        let bd = b.data();
        let out = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|r| r.iter().zip(bd).map(|(a, b)| *a + *b))
            .collect();
        self.emit("add_row", vec![rows, cols], out, &[x, bias], Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = S::of(factor);
        let v = self.value(x);
        let out = v.data().iter().map(|a| *a * f).collect();
        let shape = v.shape().to_vec();
        self.emit("scale", shape, out, &[x], Op::Scale(x, factor))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|a| kernels::gelu(*a)).collect();
        let shape = v.shape().to_vec();
        self.emit("gelu", shape, out, &[x], Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|a| a.tanh()).collect();
        let shape = v.shape().to_vec();
        self.emit("tanh", shape, out, &[x], Op::Tanh(x))
    }

    /// Selects rows of a `(n, cols)` table: the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, cols) = self.dims2(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(invalid("gather_rows", format!("row {bad} out of range for {n} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        self.emit(
            "gather_rows",
            vec![ids.len(), cols],
            out,
            &[table],
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    fn norm_params(&self, op: &'static str, x: Var, gain: Var, bias: Option<Var>) -> Result<(usize, usize)> {
        let (rows, cols) = self.dims2(x, op)?;
        let ok = self.value(gain).numel() == cols && bias.is_none_or(|b| self.value(b).numel() == cols);
        if !ok || rows * cols == 0 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![rows, cols],
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        Ok((rows, cols))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Option<Var>) -> Result<Var> {
        let (rows, cols) = self.norm_params("layer_norm", x, gain, bias)?;
        let (y, cache) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gain).data(),
            bias.map(|b| self.value(b).data()),
            cols,
        );
        let mut inputs = vec![x, gain];
        inputs.extend(bias);
        self.emit(
            "layer_norm",
            vec![rows, cols],
            y,
            &inputs,
            Op::LayerNorm { x, gain, bias, cache },
        )
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (rows, cols) = self.norm_params("rms_norm", x, gain, None)?;
        let (y, cache) = kernels::rms_norm(self.value(x).data(), self.value(gain).data(), cols);
        self.emit(
            "rms_norm",
            vec![rows, cols],
            y,
            &[x, gain],
            Op::RmsNorm { x, gain, cache },
        )
    }

    fn check_attn(&self, op: &'static str, x: Var, shape: AttnShape) -> Result<()> {
        let (rows, cols) = self.dims2(x, op)?;
        if rows != shape.batch * shape.seq || cols != shape.d_model() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![rows, cols],
                rhs: vec![shape.batch * shape.seq, shape.d_model()],
            });
        }
        Ok(())
    }

    /// Rotary position embedding on each head's column block.
    pub fn rope(&mut self, x: Var, shape: AttnShape) -> Result<Var> {
        self.check_attn("rope", x, shape)?;
        if !shape.head_dim.is_multiple_of(2) {
            return Err(invalid("rope", "head dimension must be even"));
        }
        let mut out = self.value(x).data().to_vec();
        kernels::rope_inplace(&mut out, shape.batch, shape.seq, shape.heads, shape.head_dim, 1.0);
        let dims = self.value(x).shape().to_vec();
        self.emit("rope", dims, out, &[x], Op::Rope { x, shape })
    }

    /// Causal multi-head attention returning the concatenated per-head outputs
    /// (before any output projection).
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape) -> Result<Var> {
        for x in [q, k, v] {
            self.check_attn("causal_attention", x, shape)?;
        }
        let (out, probs) =
            kernels::causal_attention(self.value(q).data(), self.value(k).data(), self.value(v).data(), shape);
        let rg = self.any_grad(&[q, k, v]);
        let probs = if rg { probs } else { Vec::new() };
        self.emit(
            "causal_attention",
            vec![shape.batch * shape.seq, shape.d_model()],
            out,
            &[q, k, v],
            Op::Attention { q, k, v, shape, probs },
        )
    }

    /// Replaces head `head`'s column block with the mean of the other heads.
    pub fn mean_of_other_heads(&mut self, x: Var, heads: usize, head: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "mean_of_other_heads")?;
        if heads < 2 || head >= heads || cols % heads != 0 {
            return Err(invalid(
                "mean_of_other_heads",
                format!("head {head} of {heads} over {cols} columns"),
            ));
        }
        let out = kernels::mean_of_other_heads(self.value(x).data(), heads, head, cols / heads);
        self.emit(
            "mean_of_other_heads",
            vec![rows, cols],
            out,
            &[x],
            Op::HeadMean { x, heads, head },
        )
    }

    /// Adds a constant tensor (no gradient flows into `noise`).
    pub fn add_constant(&mut self, x: Var, noise: Tensor<S>) -> Result<Var> {
        let c = self.constant(noise);
        self.add(x, c)
    }

    /// Softmax over the last axis of a rank-2 value.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "softmax")?;
        if rows * cols == 0 {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let mut out = self.value(x).data().to_vec();
        kernels::softmax_rows(&mut out, cols);
        self.emit("softmax", vec![rows, cols], out, &[x], Op::Softmax { x })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, vocab) = self.dims2(logits, "cross_entropy")?;
        check_targets(rows, vocab, targets)?;
        let (loss, probs) = kernels::cross_entropy(self.value(logits).data(), targets, vocab);
        let rg = self.any_grad(&[logits]);
        self.emit(
            "cross_entropy",
            vec![1],
            vec![S::of(loss)],
            &[logits],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: if rg { probs } else { Vec::new() },
            },
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(TensorError::Empty { op: "mean" });
        }
        let m = v.data().iter().map(|a| a.f64()).sum::<f64>() / v.numel() as f64;
        self.emit("mean", vec![1], vec![S::of(m)], &[x], Op::Mean(x))
    }

    /// Back-propagates from a scalar `loss`, storing gradients on every node
    /// that requires them. Gradients from earlier passes are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad { g } else { None };
        }
        for node in &self.nodes {
            if let Some(g) = &node.grad {
                if !kernels::all_finite(g) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Lazily-allocated accumulator for an input's gradient.
        fn slot<'a, S: Scalar>(grads: &'a mut [Option<Vec<S>>], nodes: &[Node<S>], v: Var) -> &'a mut Vec<S> {
            grads[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.numel()])
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().expect("rank 2");
                let n = nodes[b.0].value.numel() / k;
                let gm = MatRef::row_major(g, m, n);
                if wants(*a) {
                    let bm = MatRef::row_major(nodes[b.0].value.data(), k, n);
                    S::gemm_raw(gm, bm.t(), S::one(), slot(grads, nodes, *a), k);
                }
                if wants(*b) {
                    let am = MatRef::row_major(nodes[a.0].value.data(), m, k);
                    S::gemm_raw(am.t(), gm, S::one(), slot(grads, nodes, *b), n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v) {
                        for (d, x) in slot(grads, nodes, *v).iter_mut().zip(g) {
                            *d = *d + *x;
                        }
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let cols = nodes[bias.0].value.numel();
                if wants(*x) {
                    for (d, s) in slot(grads, nodes, *x).iter_mut().zip(g) {
                        *d = *d + *s;
                    }
                }
                if wants(*bias) {
                    let db = slot(grads, nodes, *bias);
                    for row in g.chunks(cols) {
                        for (d, s) in db.iter_mut().zip(row) {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    let f = S::of(*f);
                    for (d, s) in slot(grads, nodes, *x).iter_mut().zip(g) {
                        *d = *d + *s * f;
                    }
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let xv = nodes[x.0].value.data();
                    for ((d, s), xi) in slot(grads, nodes, *x).iter_mut().zip(g).zip(xv) {
                        *d = *d + *s * kernels::gelu_grad(*xi);
                    }
                }
            }
            Op::Tanh(x) => {
                if wants(*x) {
                    let yv = nodes[i].value.data();
                    for ((d, s), y) in slot(grads, nodes, *x).iter_mut().zip(g).zip(yv) {
                        *d = *d + *s * (S::one() - *y * *y);
                    }
                }
            }
            Op::Gather { table, ids } => {
                if wants(*table) {
                    let cols = nodes[table.0].value.shape()[1];
                    let dt = slot(grads, nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            dt[id * cols + c] = dt[id * cols + c] + g[r * cols + c];
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let cols = nodes[gain.0].value.numel();
                let xv = nodes[x.0].value.data();
                let gv = nodes[gain.0].value.data();
                let mut dx = wants(*x).then(|| vec![S::zero(); xv.len()]);
                let mut dg = wants(*gain).then(|| vec![S::zero(); cols]);
                let mut db = bias.filter(|b| wants(*b)).map(|_| vec![S::zero(); cols]);
                kernels::layer_norm_backward(
                    xv,
                    gv,
                    cache,
                    g,
                    cols,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                accumulate(grads, nodes, *x, dx);
                accumulate(grads, nodes, *gain, dg);
                if let Some(b) = bias {
                    accumulate(grads, nodes, *b, db);
                }
            }
            Op::RmsNorm { x, gain, cache } => {
                let cols = nodes[gain.0].value.numel();
                let xv = nodes[x.0].value.data();
                let gv = nodes[gain.0].value.data();
                let mut dx = wants(*x).then(|| vec![S::zero(); xv.len()]);
                let mut dg = wants(*gain).then(|| vec![S::zero(); cols]);
                kernels::rms_norm_backward(xv, gv, cache, g, cols, dx.as_deref_mut(), dg.as_deref_mut());
                accumulate(grads, nodes, *x, dx);
                accumulate(grads, nodes, *gain, dg);
            }
            Op::Rope { x, shape } => {
                if wants(*x) {
                    let mut back = g.to_vec();
                    kernels::rope_inplace(&mut back, shape.batch, shape.seq, shape.heads, shape.head_dim, -1.0);
                    accumulate(grads, nodes, *x, Some(back));
                }
            }
            Op::Attention { q, k, v, shape, probs } => {
                let n = nodes[q.0].value.numel();
                let mut dq = vec![S::zero(); n];
                let mut dk = vec![S::zero(); n];
                let mut dv = vec![S::zero(); n];
                kernels::causal_attention_backward(
                    nodes[q.0].value.data(),
                    nodes[k.0].value.data(),
                    nodes[v.0].value.data(),
                    probs,
                    g,
                    *shape,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (var, d) in [(q, dq), (k, dk), (v, dv)] {
                    if wants(*var) {
                        accumulate(grads, nodes, *var, Some(d));
                    }
                }
            }
            Op::HeadMean { x, heads, head } => {
                if wants(*x) {
                    let cols = nodes[x.0].value.shape()[1];
                    let dx = slot(grads, nodes, *x);
                    kernels::mean_of_other_heads_backward(g, *heads, *head, cols / heads, dx);
                }
            }
            Op::Softmax { x } => {
                if wants(*x) {
                    let cols = nodes[x.0].value.shape()[1];
                    let probs = nodes[i].value.data();
                    kernels::softmax_rows_backward(probs, g, slot(grads, nodes, *x), cols);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if wants(*logits) {
                    let vocab = nodes[logits.0].value.shape()[1];
                    let scale = g[0].f64() / targets.len() as f64;
                    let dl = slot(grads, nodes, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..vocab {
                            let p = probs[r * vocab + c].f64();
                            let y = if c == t { 1.0 } else { 0.0 };
                            let idx = r * vocab + c;
                            dl[idx] = dl[idx] + S::of((p - y) * scale);
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let n = nodes[x.0].value.numel();
                    let share = S::of(g[0].f64() / n as f64);
                    for d in slot(grads, nodes, *x).iter_mut() {
                        *d = *d + share;
                    }
                }
            }
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], _nodes: &[Node<S>], v: Var, delta: Option<Vec<S>>) {
    let Some(delta) = delta else { return };
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&delta) {
                *a = *a + *b;
            }
        }
        empty @ None => *empty = Some(delta),
    }
}
