//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! All values live on a [`Tape`]: an arena of nodes recorded in topological
//! order during the forward pass and replayed in reverse by [`Tape::backward`].
//! Tensors are referenced by [`TensorId`] handles into the arena. 64-bit
//! floats throughout; no general broadcasting (scalar and trailing-suffix
//! broadcast only).

mod grad_check;

pub use grad_check::{grad_check, GradCheckReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("tape state error: {0}")]
    State(String),
    #[error("non-deterministic function: {0}")]
    Determinism(String),
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Logit value used to realize -inf masking without NaN propagation.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise binary op; rhs may be a scalar or a trailing suffix of lhs.
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    // the added constant drops out of the gradient, so only the input is kept
    AddScalar(TensorId),
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    // masked outputs are exactly 0, so backward needs no mask record
    Softmax {
        input: TensorId,
    },
    LayerNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        // per-row mean and 1/sqrt(var+eps), saved at forward time
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(TensorId),
    /// Sum of per-row cross entropies over unmasked rows; scalar output.
    CrossEntropySum {
        logits: TensorId,
        targets: Vec<usize>,
        row_mask: Vec<bool>,
        weight: f64,
    },
    Sum(TensorId),
    /// out[c] = sum_r weights[r] * x[r][c]
    MeanRowsWeighted {
        input: TensorId,
        weights: Vec<f64>,
    },
    Reshape(TensorId),
    SliceRows {
        input: TensorId,
        start: usize,
    },
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
}

#[derive(Debug, Clone)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Autodiff tape: ordered arena of operation records.
///
/// Inputs of every node appear earlier in the arena, so a single reverse
/// sweep implements the chain rule. `backward` may be called once per tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let rows = numel(shape) / cols.max(1);
    (rows, cols)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::Shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].data[0]
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── elementwise ─────────────────────────────────────────────────────

    /// Checks that b broadcasts over a: equal shape, scalar, or trailing suffix.
    fn broadcast_len(&self, a: TensorId, b: TensorId) -> Result<usize, TensorError> {
        let (na, nb) = (self.nodes[a.0].data.len(), self.nodes[b.0].data.len());
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if nb == 1 {
            return Ok(1);
        }
        if sa == sb {
            return Ok(na);
        }
        let suffix_ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..];
        if suffix_ok {
            Ok(nb)
        } else {
            Err(TensorError::Shape(format!(
                "cannot broadcast {:?} over {:?}",
                sb, sa
            )))
        }
    }

    fn binary(
        &mut self,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        let nb = self.broadcast_len(a, b)?;
        let out: Vec<f64> = {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            da.iter().enumerate().map(|(i, &x)| f(x, db[i % nb])).collect()
        };
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, shape, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.nodes[b.0].data.iter().any(|&v| v == 0.0) {
            return Err(TensorError::Numeric("division by exact zero".into()));
        }
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, shape, rg, Op::Scale(a, c)))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, shape, rg, Op::AddScalar(a)))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(TensorError::Shape(format!(
                "matmul expects 2-d operands, got {:?} and {:?}",
                sa, sb
            )));
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(TensorError::Shape(format!(
                "matmul inner dims differ: {:?} x {:?}",
                sa, sb
            )));
        }
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, vec![m, n], rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() != 2 {
            return Err(TensorError::Shape(format!("transpose expects 2-d, got {:?}", sa)));
        }
        let (m, n) = (sa[0], sa[1]);
        let da = &self.nodes[a.0].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = da[i * n + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, vec![n, m], rg, Op::Transpose(a)))
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    /// Softmax over the last axis. `mask` (true = valid) may cover one row
    /// (shared across rows) or the full tensor; masked entries get exact 0.
    pub fn softmax_masked(
        &mut self,
        logits: TensorId,
        mask: Option<&[bool]>,
    ) -> Result<TensorId, TensorError> {
        let shape = self.nodes[logits.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        if let Some(m) = mask {
            if m.len() != cols && m.len() != rows * cols {
                return Err(TensorError::Mask(format!(
                    "mask length {} incompatible with shape {:?}",
                    m.len(),
                    shape
                )));
            }
        }
        let mask_vec: Option<Vec<bool>> = mask.map(|m| m.to_vec());
        let mut out = vec![0.0; rows * cols];
        {
            let data = &self.nodes[logits.0].data;
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let valid = |c: usize| match &mask_vec {
                    None => true,
                    Some(m) if m.len() == cols => m[c],
                    Some(m) => m[r * cols + c],
                };
                let mut max = f64::NEG_INFINITY;
                let mut any = false;
                for c in 0..cols {
                    if valid(c) {
                        any = true;
                        max = max.max(row[c]);
                    }
                }
                if !any {
                    return Err(TensorError::Mask(format!("all entries masked in row {r}")));
                }
                let mut sum = 0.0;
                for c in 0..cols {
                    if valid(c) {
                        let e = (row[c] - max).exp();
                        out[r * cols + c] = e;
                        sum += e;
                    }
                }
                for c in 0..cols {
                    out[r * cols + c] /= sum;
                    if !valid(c) {
                        out[r * cols + c] = 0.0;
                    }
                }
            }
        }
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            out,
            shape,
            rg,
            Op::Softmax { input: logits },
        ))
    }

    /// Layer normalization over the last axis, followed by an affine
    /// transform with per-channel gamma/beta.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        if self.nodes[gamma.0].data.len() != cols || self.nodes[beta.0].data.len() != cols {
            return Err(TensorError::Shape(format!(
                "layer_norm gamma/beta must have length {cols}"
            )));
        }
        if cols == 1 && eps == 0.0 {
            return Err(TensorError::Numeric(
                "layer_norm over a single channel with eps=0".into(),
            ));
        }
        if eps <= 0.0 {
            return Err(TensorError::Numeric("layer_norm eps must be positive".into()));
        }
        let mut out = vec![0.0; rows * cols];
        let mut means = vec![0.0; rows];
        let mut inv_stds = vec![0.0; rows];
        {
            let data = &self.nodes[x.0].data;
            let g = &self.nodes[gamma.0].data;
            let b = &self.nodes[beta.0].data;
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                means[r] = mean;
                inv_stds[r] = inv_std;
                for c in 0..cols {
                    out[r * cols + c] = (row[c] - mean) * inv_std * g[c] + b[c];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            shape,
            rg,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                mean: means,
                inv_std: inv_stds,
            },
        ))
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| gelu_fwd(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(out, shape, rg, Op::Gelu(x)))
    }

    // ── losses and reductions ───────────────────────────────────────────

    /// Mean over rows of -log softmax(logits)[target], times `weight`.
    pub fn cross_entropy_logits(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        weight: f64,
    ) -> Result<TensorId, TensorError> {
        let rows = rows_cols(self.shape(logits)).0;
        let sum = self.cross_entropy_sum_masked(logits, targets, &vec![true; rows], weight)?;
        self.scale(sum, 1.0 / rows as f64)
    }

    /// Sum over unmasked rows of -log softmax(logits)[target], times `weight`.
    /// Masked rows contribute nothing, to value or gradient.
    pub fn cross_entropy_sum_masked(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        row_mask: &[bool],
        weight: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.nodes[logits.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        if targets.len() != rows || row_mask.len() != rows {
            return Err(TensorError::Shape(format!(
                "targets/mask length must equal row count {rows}"
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(TensorError::Index(format!(
                "target class {bad} out of range for {cols} classes"
            )));
        }
        let mut total = 0.0;
        {
            let data = &self.nodes[logits.0].data;
            for r in 0..rows {
                if !row_mask[r] {
                    continue;
                }
                let row = &data[r * cols..(r + 1) * cols];
                total += log_sum_exp(row) - row[targets[r]];
            }
        }
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![total * weight],
            vec![1],
            rg,
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                row_mask: row_mask.to_vec(),
                weight,
            },
        ))
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(vec![total], vec![1], rg, Op::Sum(x)))
    }

    /// Weighted sum of rows: out[c] = sum_r weights[r] * x[r][c].
    pub fn mean_rows_weighted(
        &mut self,
        x: TensorId,
        weights: &[f64],
    ) -> Result<TensorId, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        if weights.len() != rows {
            return Err(TensorError::Shape(format!(
                "weights length {} must equal row count {rows}",
                weights.len()
            )));
        }
        let mut out = vec![0.0; cols];
        {
            let data = &self.nodes[x.0].data;
            for r in 0..rows {
                let w = weights[r];
                if w == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    out[c] += w * data[r * cols + c];
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            out,
            vec![cols],
            rg,
            Op::MeanRowsWeighted {
                input: x,
                weights: weights.to_vec(),
            },
        ))
    }

    // ── shape manipulation ──────────────────────────────────────────────

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId, TensorError> {
        if numel(shape) != self.nodes[x.0].data.len() {
            return Err(TensorError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.nodes[x.0].shape, shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(data, shape.to_vec(), rg, Op::Reshape(x)))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, rows: usize) -> Result<TensorId, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        let (total_rows, cols) = rows_cols(&shape);
        if start + rows > total_rows {
            return Err(TensorError::Index(format!(
                "row slice {start}..{} out of bounds for {total_rows} rows",
                start + rows
            )));
        }
        let data = self.nodes[x.0].data[start * cols..(start + rows) * cols].to_vec();
        let mut out_shape = vec![rows];
        out_shape.push(cols);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(data, out_shape, rg, Op::SliceRows { input: x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Shape("concat_rows of zero tensors".into()));
        }
        let cols = rows_cols(self.shape(parts[0])).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if c != cols {
                return Err(TensorError::Shape(format!(
                    "concat_rows column mismatch: {c} vs {cols}"
                )));
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.any_grad(parts);
        Ok(self.push(data, vec![rows, cols], rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Shape("concat_cols of zero tensors".into()));
        }
        let rows = rows_cols(self.shape(parts[0])).0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_cols = 0;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if r != rows {
                return Err(TensorError::Shape(format!(
                    "concat_cols row mismatch: {r} vs {rows}"
                )));
            }
            widths.push(c);
            total_cols += c;
        }
        let mut data = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for (i, &p) in parts.iter().enumerate() {
            let c = widths[i];
            let src = &self.nodes[p.0].data;
            for r in 0..rows {
                data[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            data,
            vec![rows, total_cols],
            rg,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; accumulates grads additively into
    /// every reachable tensor with `requires_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::Shape(format!(
                "backward requires a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.consumed {
            return Err(TensorError::State(
                "backward already called on this tape".into(),
            ));
        }
        self.consumed = true;
        self.accumulate(loss, vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &g, &op);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn accum_broadcast(&mut self, b: TensorId, out_len: usize, delta: impl Fn(usize) -> f64) {
        let nb = self.nodes[b.0].data.len();
        let mut g = vec![0.0; nb];
        for i in 0..out_len {
            g[i % nb] += delta(i);
        }
        self.accumulate(b, g);
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64], op: &Op) {
        let out_len = g.len();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accum_broadcast(*b, out_len, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accum_broadcast(*b, out_len, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let nb = self.nodes[b.0].data.len();
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                self.accumulate(*a, g.iter().enumerate().map(|(i, &gi)| gi * db[i % nb]).collect());
                self.accum_broadcast(*b, out_len, |i| g[i] * da[i]);
            }
            Op::Div(a, b) => {
                let nb = self.nodes[b.0].data.len();
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                self.accumulate(*a, g.iter().enumerate().map(|(i, &gi)| gi / db[i % nb]).collect());
                self.accum_broadcast(*b, out_len, |i| {
                    let bi = db[i % nb];
                    -g[i] * da[i] / (bi * bi)
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(*a, g.iter().map(|&gi| gi * c).collect());
            }
            Op::AddScalar(a) => {
                self.accumulate(*a, g.to_vec());
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = &self.nodes[a.0].shape;
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].shape[1];
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                // dA = dC . B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * db[p * n + j];
                        }
                    }
                }
                self.accumulate(*a, ga);
                // dB = A^T . dC
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = da[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                self.accumulate(*b, gb);
            }
            Op::Transpose(a) => {
                let (n, m) = {
                    let s = &self.nodes[idx].shape;
                    (s[0], s[1])
                };
                let mut ga = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] = g[i * m + j];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Softmax { input } => {
                let y = self.nodes[idx].data.clone();
                let (rows, cols) = rows_cols(&self.nodes[idx].shape);
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        gx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(*input, gx);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (rows, cols) = rows_cols(&self.nodes[idx].shape);
                let x = self.nodes[input.0].data.clone();
                let gm = self.nodes[gamma.0].data.clone();
                let mut gx = vec![0.0; rows * cols];
                let mut ggamma = vec![0.0; cols];
                let mut gbeta = vec![0.0; cols];
                for r in 0..rows {
                    let xr = &x[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let (mu, is) = (mean[r], inv_std[r]);
                    // xhat and the two row sums used by the closed-form gradient
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for c in 0..cols {
                        let xhat = (xr[c] - mu) * is;
                        let dy = gr[c] * gm[c];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                        ggamma[c] += gr[c] * xhat;
                        gbeta[c] += gr[c];
                    }
                    let nc = cols as f64;
                    for c in 0..cols {
                        let xhat = (xr[c] - mu) * is;
                        let dy = gr[c] * gm[c];
                        gx[r * cols + c] = is / nc * (nc * dy - sum_dy - xhat * sum_dy_xhat);
                    }
                }
                self.accumulate(*input, gx);
                self.accumulate(*gamma, ggamma);
                self.accumulate(*beta, gbeta);
            }
            Op::Gelu(a) => {
                let x = self.nodes[a.0].data.clone();
                self.accumulate(
                    *a,
                    g.iter()
                        .zip(&x)
                        .map(|(&gi, &xi)| gi * gelu_bwd(xi))
                        .collect(),
                );
            }
            Op::CrossEntropySum {
                logits,
                targets,
                row_mask,
                weight,
            } => {
                let (rows, cols) = rows_cols(&self.nodes[logits.0].shape);
                let data = self.nodes[logits.0].data.clone();
                let up = g[0] * weight;
                let mut gl = vec![0.0; rows * cols];
                for r in 0..rows {
                    if !row_mask[r] {
                        continue;
                    }
                    let row = &data[r * cols..(r + 1) * cols];
                    let lse = log_sum_exp(row);
                    for c in 0..cols {
                        let p = (row[c] - lse).exp();
                        gl[r * cols + c] = up * (p - if c == targets[r] { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(*logits, gl);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].data.len();
                self.accumulate(*a, vec![g[0]; n]);
            }
            Op::MeanRowsWeighted { input, weights } => {
                let (rows, cols) = rows_cols(&self.nodes[input.0].shape);
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let w = weights[r];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..cols {
                        gx[r * cols + c] = w * g[c];
                    }
                }
                self.accumulate(*input, gx);
            }
            Op::Reshape(a) => {
                self.accumulate(*a, g.to_vec());
            }
            Op::SliceRows { input, start } => {
                let (_, cols) = rows_cols(&self.nodes[idx].shape);
                let total = self.nodes[input.0].data.len();
                let mut gx = vec![0.0; total];
                gx[start * cols..start * cols + g.len()].copy_from_slice(g);
                self.accumulate(*input, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].data.len();
                    self.accumulate(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = rows_cols(&self.nodes[idx].shape).0;
                let total_cols = rows_cols(&self.nodes[idx].shape).1;
                let mut offset = 0;
                for &p in parts {
                    let c = rows_cols(&self.nodes[p.0].shape).1;
                    let mut gp = vec![0.0; rows * c];
                    for r in 0..rows {
                        gp[r * c..(r + 1) * c]
                            .copy_from_slice(&g[r * total_cols + offset..r * total_cols + offset + c]);
                    }
                    self.accumulate(p, gp);
                    offset += c;
                }
            }
        }
    }
}

pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
