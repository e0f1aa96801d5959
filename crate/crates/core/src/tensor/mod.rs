//! Dense tensors with a define-by-run reverse-mode tape.
//!
//! Parameters live outside the tape as [`Tensor`]s addressed by a
//! [`ParamId`]; a forward pass copies them into the [`Graph`] as leaves and
//! [`Graph::backward`] accumulates into the `grad` buffer of every parameter
//! that requires it. Nodes are appended in evaluation order, so the node list
//! is already topologically sorted and backward is a single reverse sweep.

mod check;
mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

pub use check::{compare_gradients, finite_diff_grad, GradCheckReport};

/// Index of a parameter in the slice handed to [`Graph::backward`].
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("no supervised positions")]
    NoSupervisedPositions,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("nothing to check")]
    NothingToCheck,
    #[error("parameter {0} is not registered")]
    UnknownParam(ParamId),
}

pub type Result<T, E = TensorError> = core::result::Result<T, E>;

/// Row-major dense tensor of `f64`.
///
/// `grad` is present exactly when the tensor requires gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&e| e == 0) || numel != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Turning gradients on allocates a zeroed accumulator; turning them off drops it.
    pub fn set_requires_grad(&mut self, on: bool) {
        match (on, self.grad.is_some()) {
            (true, false) => self.grad = Some(vec![0.0; self.data.len()]),
            (false, true) => self.grad = None,
            _ => {}
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Simultaneous mutable access to values and gradient, for optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.data, self.grad.as_deref())
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        if let Some(acc) = self.grad.as_mut() {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += *x;
            }
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch geometry for fused multi-head attention over `[batch * seq, dim]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; dropped after backward.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / cols.max(1), cols)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            grad: None,
        }
    }

    /// Leaf linked to parameter `id`; its gradient flows back on [`Graph::backward`]
    /// iff the tensor requires it.
    pub fn param(&mut self, id: ParamId, t: &Tensor) -> Var {
        self.push(
            t.shape.clone(),
            t.data.clone(),
            Op::Leaf { param: Some(id) },
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf { param: None }, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Add(a, b), ng))
    }

    /// `x + bias` with `bias` broadcast over every leading index of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.shape(bias) != [cols] {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x, bias]);
        Ok(self.push(shape, out, Op::AddBias(x, bias), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, out, Op::Scale(x, s), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, out, Op::Gelu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| libm::tanh(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, out, Op::Tanh(x), ng)
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x, gain, bias]);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Row lookup: `table[ids[i]]` for each `i`, giving `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(TensorError::Shape {
                op: "embedding",
                lhs: shape.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (v, d) = (shape[0], shape[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    extent: v,
                });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.needs(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Selects rows of a `[n, d]` node.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(TensorError::IndexOutOfRange {
                    index: r,
                    extent: n,
                });
            }
            out.extend_from_slice(&xv[r * d..(r + 1) * d]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(
            vec![rows.len(), d],
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout. `rng == None` is evaluation mode and returns `x` untouched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Var {
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return x,
        };
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, out, Op::Dropout { x, mask }, ng)
    }

    /// Scaled dot-product multi-head attention. Keys with `key_mask[i] == false`
    /// receive exactly zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        key_mask: &[bool],
    ) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        let AttentionLayout { batch, seq, heads } = layout;
        let bad = shape.len() != 2
            || shape[0] != batch * seq
            || heads == 0
            || shape[1] % heads != 0
            || self.shape(k) != shape.as_slice()
            || self.shape(v) != shape.as_slice()
            || key_mask.len() != batch * seq;
        if bad {
            return Err(TensorError::Shape {
                op: "attention",
                lhs: shape,
                rhs: vec![batch, seq, heads, key_mask.len()],
            });
        }
        let (out, probs) = kernels::attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            layout,
            shape[1],
            key_mask,
        );
        let ng = self.needs(&[q, k, v]);
        Ok(self.push(
            shape,
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            ng,
        ))
    }

    /// Attention weights `[batch, heads, seq, seq]` of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.node(v).op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Attention weights of every attention node, in recording order.
    pub fn all_attention_probs(&self) -> Vec<&[f64]> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { probs, .. } => Some(probs.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Mean cross-entropy over rows whose target is `Some`. Returns a scalar node;
    /// the row softmax is available from [`Graph::softmax_probs`].
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, c) = rows_cols(self.shape(logits));
        if self.shape(logits).len() != 2 || targets.len() != n {
            return Err(TensorError::Shape {
                op: "softmax_xent",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0usize;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = libm::exp(row[j] - max);
                probs[r * c + j] = e;
                z += e;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p /= z;
            }
            if let Some(t) = targets[r] {
                if t >= c {
                    return Err(TensorError::IndexOutOfRange {
                        index: t,
                        extent: c,
                    });
                }
                total += libm::log(z) + max - row[t];
                count += 1;
            }
        }
        if count == 0 {
            return Err(TensorError::NoSupervisedPositions);
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite("softmax_xent"));
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    pub fn softmax_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.node(v).op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from the scalar `loss`, accumulating into the `grad` of every
    /// parameter leaf whose tensor requires gradients. Repeated calls accumulate.
    pub fn backward(&self, loss: Var, params: &mut [Tensor]) -> Result<()> {
        if self.shape(loss) != [1] {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for n in &self.nodes[..=loss.0] {
            if let Op::Leaf { param: Some(id) } = n.op {
                if id >= params.len() {
                    return Err(TensorError::UnknownParam(id));
                }
            }
        }
        if !self.node(loss).needs_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, params);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut [Tensor],
    ) {
        // Returns the accumulator for `v`, or None when `v` does not need a gradient.
        fn slot<'a>(
            nodes: &[Node],
            grads: &'a mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
        }
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf { param } => {
                if let Some(id) = param {
                    params[*id].accumulate_grad(g);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = slot(nodes, grads, *a) {
                    kernels::matmul_bt_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    kernels::matmul_at_acc(&nodes[a.0].value, g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = slot(nodes, grads, *v) {
                        kernels::axpy(gv, g, 1.0);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    kernels::axpy(gx, g, 1.0);
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    let d = gb.len();
                    for row in g.chunks_exact(d) {
                        kernels::axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    kernels::axpy(gx, g, *s);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = nodes[gain.0].value.len();
                let gv = &nodes[gain.0].value;
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for grow in g.chunks_exact(d) {
                        kernels::axpy(gb, grow, 1.0);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, s) in rstd.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            dh[j] = grow[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hrow[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        let out = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += s * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = slot(nodes, grads, *table) {
                    let d = nodes[table.0].shape[1];
                    for (i, &id) in ids.iter().enumerate() {
                        kernels::axpy(&mut gt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d], 1.0);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let d = *nodes[x.0].shape.last().unwrap_or(&1);
                    for (i, &r) in rows.iter().enumerate() {
                        kernels::axpy(&mut gx[r * d..(r + 1) * d], &g[i * d..(i + 1) * d], 1.0);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let dim = nodes[q.0].shape[1];
                let len = nodes[q.0].value.len();
                let want = [q, k, v].map(|x| nodes[x.0].needs_grad);
                let mut dq = vec![0.0; len];
                let mut dk = vec![0.0; len];
                let mut dv = vec![0.0; len];
                kernels::attention_backward(
                    g,
                    &nodes[q.0].value,
                    &nodes[k.0].value,
                    &nodes[v.0].value,
                    probs,
                    *layout,
                    dim,
                    (&mut dq, &mut dk, &mut dv),
                );
                for (var, (d, w)) in [q, k, v].into_iter().zip([dq, dk, dv].iter().zip(want)) {
                    if w {
                        if let Some(acc) = slot(nodes, grads, *var) {
                            kernels::axpy(acc, d, 1.0);
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
                count,
            } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let c = nodes[logits.0].shape[1];
                    let scale = g[0] / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let row = &mut gl[r * c..(r + 1) * c];
                            for j in 0..c {
                                row[j] += scale * probs[r * c + j];
                            }
                            row[*t] -= scale;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
