//! Reverse-mode tape over [`Tensor`] primitives.
//!
//! Every primitive application is appended to the tape in recording order, so
//! the recording order is a topological order. [`Graph::backward`] walks the
//! tape in exact reverse order and accumulates vector-Jacobian products into
//! per-node buffers; there is no unordered reduction anywhere, so gradients are
//! bit-reproducible.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{dim, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Attribute-carrying variants hold the non-tensor
/// arguments of the op.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `[m,k] x [k,n] -> [m,n]`.
    MatMul,
    /// Same-shape sum, or a row-bias add when the right operand is a 1-D
    /// vector whose length is the left operand's column count.
    Add,
    /// Same-shape elementwise product.
    Mul,
    Scale(f64),
    /// Exact erf-form GELU.
    Gelu,
    /// Softmax over each row of a 2-D tensor. The causal form requires a
    /// square input and gives zero weight to columns past the row index.
    Softmax { causal: bool },
    /// Row-wise layer norm; inputs are `(x [m,n], gain [n], bias [n])`.
    LayerNorm { eps: f64 },
    /// Rows of a `[v,d]` table selected by `ids`.
    Gather { ids: Vec<usize> },
    /// Mean over masked rows of `-log softmax(logits)[target]`; yields a
    /// scalar.
    CrossEntropy { targets: Vec<usize>, mask: Vec<bool> },
    Transpose,
    /// Columns `start..end` of a 2-D tensor.
    Slice { start: usize, end: usize },
    /// Column-wise concatenation of 2-D tensors with equal row counts.
    Concat,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "elementwise-mul",
            Op::Scale(_) => "scalar-scale",
            Op::Gelu => "gelu",
            Op::Softmax { .. } => "row-softmax",
            Op::LayerNorm { .. } => "layer-norm",
            Op::Gather { .. } => "embedding-gather",
            Op::CrossEntropy { .. } => "masked-mean-cross-entropy",
            Op::Transpose => "transpose",
            Op::Slice { .. } => "slice",
            Op::Concat => "concat",
        }
    }
}

enum NodeKind {
    Leaf,
    Apply(Op),
}

struct Node {
    kind: NodeKind,
    inputs: Vec<Var>,
    value: Arc<Tensor>,
    /// Whether any trainable leaf lies upstream of this node.
    needs_grad: bool,
    /// For leaves: whether the caller asked for this leaf's gradient.
    requires_grad: bool,
    /// Forward-pass cache for ops whose VJP needs more than inputs/output.
    aux: Vec<f64>,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients from [`Graph::backward`], keyed by leaf handle.
#[derive(Debug, Default)]
pub struct Gradients {
    map: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.map.get(&leaf)
    }

    pub fn remove(&mut self, leaf: Var) -> Option<Tensor> {
        self.map.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Its gradient is reported by `backward` iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push_leaf(Arc::new(tensor), rg)
    }

    /// Adds a shared leaf (typically a model parameter) without copying it.
    pub fn shared_leaf(&mut self, tensor: &Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_leaf(Arc::clone(tensor), requires_grad)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_leaf(Arc::new(tensor), false)
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            kind: NodeKind::Leaf,
            inputs: Vec::new(),
            value,
            needs_grad: requires_grad,
            requires_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Applies a primitive, records it and returns the output handle.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::Contract(format!("unknown node {} on graph", v.0)));
            }
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.nodes[v.0].value.as_ref()).collect();
        let (out, aux) = forward(&op, &vals)?;
        if !out.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            kind: NodeKind::Apply(op),
            inputs: inputs.to_vec(),
            value: Arc::new(out),
            needs_grad,
            requires_grad: false,
            aux,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Gelu, &[a])
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        self.apply(Op::Softmax { causal }, &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.apply(Op::LayerNorm { eps }, &[x, gain, bias])
    }

    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        self.apply(Op::Gather { ids }, &[table])
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, mask: Vec<bool>) -> Result<Var> {
        self.apply(Op::CrossEntropy { targets, mask }, &[logits])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::Slice { start, end }, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::Concat, parts)
    }

    /// Sum of all entries, composed from matmuls against constant ones.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let row = match *self.shape(a) {
            [n] => {
                let zero = self.constant(Tensor::zeros(vec![1, n]));
                self.add(zero, a)?
            }
            [r, _] => {
                let ones = self.constant(Tensor::filled(vec![1, r], 1.0));
                self.matmul(ones, a)?
            }
            ref s => return Err(dim("sum", format!("unsupported shape {s:?}"))),
        };
        let n = self.shape(row)[1];
        let ones = self.constant(Tensor::filled(vec![n, 1], 1.0));
        self.matmul(row, ones)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns one gradient per leaf whose `requires_grad` flag is set; leaves
    /// the loss does not depend on get a zero tensor.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("unknown loss node {}", loss.0)));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let op = match &node.kind {
                NodeKind::Leaf => continue,
                NodeKind::Apply(op) => op,
            };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (slot, input) in node.inputs.iter().enumerate() {
                let inode = &self.nodes[input.0];
                if !inode.needs_grad {
                    continue;
                }
                let buf = grads[input.0].get_or_insert_with(|| vec![0.0; inode.value.numel()]);
                vjp(op, self, node, slot, &g, buf)?;
            }
            // Keep no buffer for interior nodes once consumed.
            grads[idx] = None;
        }

        let mut map = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.kind, NodeKind::Leaf) && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                map.insert(Var(idx), Tensor::raw(shape, data));
            }
        }
        Ok(Gradients { map })
    }
}

// ---------------------------------------------------------------------------
// Kernels

/// `c = a * b + beta * c` with arbitrary strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_rs + (k - 1) * a_cs);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_rs + (n - 1) * b_cs);
    // SAFETY: bounds of all three operands are asserted above for the given
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

fn forward(op: &Op, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let name = op.name();
    let arity = match op {
        Op::MatMul | Op::Add | Op::Mul => Some(2),
        Op::LayerNorm { .. } => Some(3),
        Op::Concat => None,
        _ => Some(1),
    };
    match arity {
        Some(a) if inputs.len() != a => {
            return Err(dim(name, format!("expected {a} inputs, got {}", inputs.len())));
        }
        None if inputs.is_empty() => return Err(dim(name, "needs at least one input")),
        _ => {}
    }

    let none = Vec::new;
    match op {
        Op::MatMul => {
            let (m, k) = inputs[0].dims2(name)?;
            let (k2, n) = inputs[1].dims2(name)?;
            if k != k2 {
                return Err(dim(name, format!("[{m},{k}] x [{k2},{n}]")));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, inputs[0].data(), k, 1, inputs[1].data(), n, 1, &mut out, 0.0);
            Ok((Tensor::raw(vec![m, n], out), none()))
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                return Ok((Tensor::raw(a.shape().to_vec(), out), none()));
            }
            let (_, n) = a.dims2(name)?;
            if b.shape() != [n] {
                return Err(dim(name, format!("{:?} + {:?}", a.shape(), b.shape())));
            }
            let bias = b.data();
            let out = a
                .data()
                .chunks_exact(n)
                .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
                .collect();
            Ok((Tensor::raw(a.shape().to_vec(), out), none()))
        }
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(dim(name, format!("{:?} * {:?}", a.shape(), b.shape())));
            }
            let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Ok((Tensor::raw(a.shape().to_vec(), out), none()))
        }
        Op::Scale(s) => {
            let out = inputs[0].data().iter().map(|x| x * s).collect();
            Ok((Tensor::raw(inputs[0].shape().to_vec(), out), none()))
        }
        Op::Gelu => {
            let out = inputs[0].data().iter().map(|&x| gelu(x)).collect();
            Ok((Tensor::raw(inputs[0].shape().to_vec(), out), none()))
        }
        Op::Softmax { causal } => {
            let (m, n) = inputs[0].dims2(name)?;
            if *causal && m != n {
                return Err(dim(name, format!("causal softmax needs a square input, got [{m},{n}]")));
            }
            let mut out = vec![0.0; m * n];
            for (i, (row, orow)) in inputs[0].data().chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
                let width = if *causal { i + 1 } else { n };
                softmax_into(&row[..width], &mut orow[..width]);
            }
            Ok((Tensor::raw(vec![m, n], out), none()))
        }
        Op::LayerNorm { eps } => {
            let (m, n) = inputs[0].dims2(name)?;
            if inputs[1].shape() != [n] || inputs[2].shape() != [n] {
                return Err(dim(
                    name,
                    format!("gain {:?} / bias {:?} for width {n}", inputs[1].shape(), inputs[2].shape()),
                ));
            }
            let (gain, bias) = (inputs[1].data(), inputs[2].data());
            // aux layout: xhat (m*n) followed by rstd (m)
            let mut aux = vec![0.0; m * n + m];
            let mut out = vec![0.0; m * n];
            for (i, row) in inputs[0].data().chunks_exact(n).enumerate() {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                aux[m * n + i] = rstd;
                for j in 0..n {
                    let xh = (row[j] - mean) * rstd;
                    aux[i * n + j] = xh;
                    out[i * n + j] = xh * gain[j] + bias[j];
                }
            }
            Ok((Tensor::raw(vec![m, n], out), aux))
        }
        Op::Gather { ids } => {
            let (v, d) = inputs[0].dims2(name)?;
            if ids.is_empty() {
                return Err(dim(name, "empty id list"));
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= v) {
                return Err(dim(name, format!("id {bad} out of range for table of {v} rows")));
            }
            let table = inputs[0].data();
            let out = ids.iter().flat_map(|&i| table[i * d..(i + 1) * d].iter().copied()).collect();
            Ok((Tensor::raw(vec![ids.len(), d], out), none()))
        }
        Op::CrossEntropy { targets, mask } => {
            let (m, v) = inputs[0].dims2(name)?;
            if targets.len() != m || mask.len() != m {
                return Err(dim(
                    name,
                    format!("{m} rows but {} targets / {} mask entries", targets.len(), mask.len()),
                ));
            }
            let count = mask.iter().filter(|&&b| b).count();
            if count == 0 {
                return Err(Error::Contract("cross-entropy mask selects no position".into()));
            }
            let mut probs = vec![0.0; m * v];
            let mut total = 0.0;
            for (i, row) in inputs[0].data().chunks_exact(v).enumerate() {
                if !mask[i] {
                    continue;
                }
                let t = targets[i];
                if t >= v {
                    return Err(dim(name, format!("target {t} out of range for {v} classes")));
                }
                let p = &mut probs[i * v..(i + 1) * v];
                let lse = softmax_into(row, p);
                total += lse - row[t];
            }
            Ok((Tensor::raw(vec![1], vec![total / count as f64]), probs))
        }
        Op::Transpose => {
            let (m, n) = inputs[0].dims2(name)?;
            let src = inputs[0].data();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = src[i * n + j];
                }
            }
            Ok((Tensor::raw(vec![n, m], out), none()))
        }
        Op::Slice { start, end } => {
            let (m, n) = inputs[0].dims2(name)?;
            if start >= end || *end > n {
                return Err(dim(name, format!("columns {start}..{end} of width {n}")));
            }
            let out = inputs[0]
                .data()
                .chunks_exact(n)
                .flat_map(|row| row[*start..*end].iter().copied())
                .collect();
            Ok((Tensor::raw(vec![m, end - start], out), none()))
        }
        Op::Concat => {
            let m = inputs[0].dims2(name)?.0;
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = t.dims2(name)?;
                if r != m {
                    return Err(dim(name, format!("row counts {m} and {r} differ")));
                }
                widths.push(c);
            }
            let n: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for (t, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
                }
            }
            Ok((Tensor::raw(vec![m, n], out), none()))
        }
    }
}

/// Writes `softmax(row)` into `out` and returns `logsumexp(row)`.
fn softmax_into(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    max + sum.ln()
}

/// Accumulates the VJP of `node` with respect to input `slot` into `buf`.
fn vjp(op: &Op, graph: &Graph, node: &Node, slot: usize, g: &[f64], buf: &mut [f64]) -> Result<()> {
    let input = |i: usize| graph.nodes[node.inputs[i].0].value.as_ref();
    let out = node.value.as_ref();
    match op {
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = a.dims2("matmul")?;
            let n = b.shape()[1];
            if slot == 0 {
                // dA = dY B^T
                gemm(m, n, k, g, n, 1, b.data(), 1, n, buf, 1.0);
            } else {
                // dB = A^T dY
                gemm(k, m, n, a.data(), 1, k, g, n, 1, buf, 1.0);
            }
        }
        Op::Add => {
            if slot == 0 || input(0).shape() == input(1).shape() {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            } else {
                let n = buf.len();
                for row in g.chunks_exact(n) {
                    for (b, x) in buf.iter_mut().zip(row) {
                        *b += x;
                    }
                }
            }
        }
        Op::Mul => {
            let other = input(1 - slot).data();
            for ((b, x), o) in buf.iter_mut().zip(g).zip(other) {
                *b += x * o;
            }
        }
        Op::Scale(s) => {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += s * x;
            }
        }
        Op::Gelu => {
            for ((b, x), &a) in buf.iter_mut().zip(g).zip(input(0).data()) {
                *b += x * gelu_grad(a);
            }
        }
        Op::Softmax { causal } => {
            let (_, n) = out.dims2("row-softmax")?;
            for (i, ((y, gr), br)) in out
                .data()
                .chunks_exact(n)
                .zip(g.chunks_exact(n))
                .zip(buf.chunks_exact_mut(n))
                .enumerate()
            {
                let width = if *causal { i + 1 } else { n };
                let dot: f64 = y[..width].iter().zip(&gr[..width]).map(|(a, b)| a * b).sum();
                for j in 0..width {
                    br[j] += y[j] * (gr[j] - dot);
                }
            }
        }
        Op::LayerNorm { .. } => {
            let (m, n) = out.dims2("layer-norm")?;
            let xhat = &node.aux[..m * n];
            let rstd = &node.aux[m * n..];
            match slot {
                0 => {
                    let gain = input(1).data();
                    let mut dxh = vec![0.0; n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let xr = &xhat[i * n..(i + 1) * n];
                        for j in 0..n {
                            dxh[j] = gr[j] * gain[j];
                        }
                        let mean_d = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            buf[i * n + j] += rstd[i] * (dxh[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
                1 => {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                _ => {
                    for row in g.chunks_exact(n) {
                        for (b, x) in buf.iter_mut().zip(row) {
                            *b += x;
                        }
                    }
                }
            }
        }
        Op::Gather { ids } => {
            let d = out.shape()[1];
            for (r, &id) in ids.iter().enumerate() {
                for (b, x) in buf[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *b += x;
                }
            }
        }
        Op::CrossEntropy { targets, mask } => {
            let (_, v) = input(0).dims2("masked-mean-cross-entropy")?;
            let count = mask.iter().filter(|&&b| b).count() as f64;
            let scale = g[0] / count;
            for (i, (&keep, &t)) in mask.iter().zip(targets).enumerate() {
                if !keep {
                    continue;
                }
                let p = &node.aux[i * v..(i + 1) * v];
                let br = &mut buf[i * v..(i + 1) * v];
                for (b, &pj) in br.iter_mut().zip(p) {
                    *b += scale * pj;
                }
                br[t] -= scale;
            }
        }
        Op::Transpose => {
            let (m, n) = input(0).dims2("transpose")?;
            for i in 0..m {
                for j in 0..n {
                    buf[i * n + j] += g[j * m + i];
                }
            }
        }
        Op::Slice { start, end } => {
            let n = input(0).shape()[1];
            let w = end - start;
            for (row, gr) in buf.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                for (b, x) in row[*start..*end].iter_mut().zip(gr) {
                    *b += x;
                }
            }
        }
        Op::Concat => {
            let n = out.shape()[1];
            let offset: usize = (0..slot).map(|i| input(i).shape()[1]).sum();
            let w = input(slot).shape()[1];
            for (row, gr) in buf.chunks_exact_mut(w).zip(g.chunks_exact(n)) {
                for (b, x) in row.iter_mut().zip(&gr[offset..offset + w]) {
                    *b += x;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_scalar() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 1], &[2.0]));
        let b = g.constant(t(&[1, 1], &[3.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[6.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let s = g.softmax(a, false).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 5.0, 0.0, 0.0]));
        let s = g.softmax(a, true).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn gelu_at_zero() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1], &[0.0]));
        let s = g.gelu(a).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[0.3, -1.0, 2.0]).with_requires_grad(true));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_half_squared_norm() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 1], &[3.0, 4.0]).with_requires_grad(true));
        let xt = g.transpose(x).unwrap();
        let sq = g.matmul(xt, x).unwrap();
        let half = g.scale(sq, 0.5).unwrap();
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let y = g.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(y).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { op: "matmul", .. })));
    }

    #[test]
    fn overflow_is_numeric_error_naming_op() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1], &[1e300]));
        let err = g.scale(a, 1e300).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scalar-scale" }));
    }

    #[test]
    fn empty_cross_entropy_mask_is_contract_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.cross_entropy(a, vec![0, 1], vec![false, false]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_vocab() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![4, 257]));
        let l = g.cross_entropy(a, vec![1, 2, 3, 4], vec![true; 4]).unwrap();
        assert!((g.value(l).data()[0] - 257f64.ln()).abs() < 1e-12);
    }
}
