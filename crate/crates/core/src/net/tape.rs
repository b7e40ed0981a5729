//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! The op set is small and fused: each op knows its own backward rule and
//! caches whatever it needs from the forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for backpropagation.

use super::tensor::{axpy, dot, log_softmax, matmul, matmul_acc, matmul_at_acc, matmul_bt, matmul_bt_acc, softmax, Tensor};
use crate::error::{LremError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Gather { table: Var, ids: Vec<u32> },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, rstd: Vec<f64> },
    Gelu { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Vec<Vec<f64>>> },
    SelectRows { x: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<(usize, usize)>, probs: Vec<Vec<f64>> },
    LogProbGather { logits: Var, targets: Vec<(usize, usize)>, probs: Vec<Vec<f64>> },
    ClippedSurrogate { new_logps: Var, ratios: Vec<f64>, advantages: Vec<f64>, active: Vec<bool> },
    Sum { x: Var },
    WeightedSum(Vec<(Var, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Gather { .. } => "gather",
            Op::Add(..) => "add",
            Op::AddBias { .. } => "add_bias",
            Op::MatMul { .. } => "matmul",
            Op::MatMulBt { .. } => "matmul_bt",
            Op::Scale { .. } => "scale",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Attention { .. } => "attention",
            Op::SelectRows { .. } => "select_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::L2NormalizeRows { .. } => "l2_normalize",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::LogProbGather { .. } => "log_prob_gather",
            Op::ClippedSurrogate { .. } => "clipped_surrogate",
            Op::Sum { .. } => "sum",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    label: Option<String>,
}

/// Attention visibility rule: query row `i` may read key row `j`.
pub trait AttendMask {
    fn allowed(&self, i: usize, j: usize) -> bool;
}

/// Causal mask with optional padding: pad keys are hidden from every other row.
#[derive(Debug, Clone)]
pub struct CausalPadMask<'a> {
    pub pad: Option<&'a [bool]>,
}

impl AttendMask for CausalPadMask<'_> {
    #[inline]
    fn allowed(&self, i: usize, j: usize) -> bool {
        if j > i {
            return false;
        }
        match self.pad {
            Some(p) => i == j || !p[j],
            None => true,
        }
    }
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(LremError::NonFinite(format!("output of `{}`", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            label: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds an input leaf. Labelled leaves are reported by name in errors.
    pub fn leaf(&mut self, value: Tensor, label: impl Into<String>) -> Result<Var> {
        let label = label.into();
        if !value.all_finite() {
            return Err(LremError::NonFinite(format!("leaf `{label}`")));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            label: Some(label),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, "constant")
    }

    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= t.rows {
                return Err(LremError::Shape(format!("gather id {id} >= {}", t.rows)));
            }
            out.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(LremError::Shape(format!("add {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×n bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows != 1 || vb.cols != vx.cols {
            return Err(LremError::Shape(format!("bias {:?} for {:?}", vb.shape(), vx.shape())));
        }
        let mut out = vx.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += *b;
            }
        }
        self.push(out, Op::AddBias { x, bias })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(LremError::Shape(format!("matmul {:?} x {:?}", va.shape(), vb.shape())));
        }
        let out = matmul(va, vb);
        self.push(out, Op::MatMul { a, b })
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.cols {
            return Err(LremError::Shape(format!("matmul_bt {:?} x {:?}ᵀ", va.shape(), vb.shape())));
        }
        let out = matmul_bt(va, vb);
        self.push(out, Op::MatMulBt { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale { x, c })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both 1×cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = vx.cols;
        let mut xhat = Tensor::zeros(vx.rows, n);
        let mut out = Tensor::zeros(vx.rows, n);
        let mut rstd = Vec::with_capacity(vx.rows);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let (h, s) = normalize_row(row);
            rstd.push(s);
            xhat.row_mut(r).copy_from_slice(&h);
            let orow = out.row_mut(r);
            for c in 0..n {
                orow[c] = h[c] * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu { x })
    }

    /// Multi-head scaled dot-product attention over rows of `q`, `k`, `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &dyn AttendMask) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let t = vq.rows;
        let d = vq.cols;
        if vk.shape() != (t, d) || vv.shape() != (t, d) || d % heads != 0 {
            return Err(LremError::Shape("attention inputs".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(t, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut ph = Vec::with_capacity(t);
            for i in 0..t {
                let qi = &vq.row(i)[off..off + dh];
                let p = attend_row(qi, i, |j| &vk.row(j)[off..off + dh], scale, mask);
                let orow = &mut out.data[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    if pj != 0.0 {
                        axpy(pj, &vv.row(j)[off..off + dh], orow);
                    }
                }
                ph.push(p);
            }
            probs.push(ph);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let mut out = Tensor::zeros(rows.len(), vx.cols);
        for (i, &r) in rows.iter().enumerate() {
            if r >= vx.rows {
                return Err(LremError::Shape(format!("select row {r} of {}", vx.rows)));
            }
            out.row_mut(i).copy_from_slice(vx.row(r));
        }
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(LremError::Shape("concat of nothing".into()));
        }
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols != cols {
                return Err(LremError::Shape("concat column mismatch".into()));
            }
            rows += v.rows;
            data.extend_from_slice(&v.data);
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                return Err(LremError::ZeroNorm);
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x, norms })
    }

    /// Mean over `targets` of `-log softmax(logits[row])[class]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        if targets.is_empty() {
            return Err(LremError::InvalidArgument("cross entropy over no targets".into()));
        }
        let vl = self.value(logits);
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for &(r, c) in targets {
            if r >= vl.rows || c >= vl.cols {
                return Err(LremError::Shape(format!("target ({r},{c}) outside {:?}", vl.shape())));
            }
            let lp = log_softmax(vl.row(r));
            total -= lp[c];
            probs.push(lp.iter().map(|v| v.exp()).collect());
        }
        let out = Tensor::scalar(total / targets.len() as f64);
        self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Column vector of `log softmax(logits[row])[class]` for each target.
    pub fn log_prob_gather(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let vl = self.value(logits);
        let mut out = Tensor::zeros(targets.len(), 1);
        let mut probs = Vec::with_capacity(targets.len());
        for (i, &(r, c)) in targets.iter().enumerate() {
            if r >= vl.rows || c >= vl.cols {
                return Err(LremError::Shape(format!("target ({r},{c}) outside {:?}", vl.shape())));
            }
            let lp = log_softmax(vl.row(r));
            out.data[i] = lp[c];
            probs.push(lp.iter().map(|v| v.exp()).collect());
        }
        self.push(out, Op::LogProbGather { logits, targets: targets.to_vec(), probs })
    }

    /// Negated mean of `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)` with `ρ = exp(new - old)` per token.
    pub fn clipped_surrogate(&mut self, new_logps: Var, old_logps: &[f64], advantages: &[f64], eps: f64) -> Result<Var> {
        let vn = self.value(new_logps);
        let n = vn.len();
        if old_logps.len() != n || advantages.len() != n {
            return Err(LremError::Shape(format!(
                "surrogate lengths new {n}, old {}, adv {}",
                old_logps.len(),
                advantages.len()
            )));
        }
        if n == 0 {
            return Err(LremError::InvalidArgument("surrogate over no tokens".into()));
        }
        let mut ratios = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            let (term, unclipped, ratio) = surrogate_term(vn.data[i], old_logps[i], advantages[i], eps);
            total += term;
            ratios.push(ratio);
            active.push(unclipped);
        }
        let out = Tensor::scalar(-total / n as f64);
        self.push(
            out,
            Op::ClippedSurrogate { new_logps, ratios, advantages: advantages.to_vec(), active },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// `Σ wᵢ·xᵢ` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(LremError::Shape("weighted sum of nothing".into()));
        }
        let shape = self.value(terms[0].0).shape();
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape {
                return Err(LremError::Shape("weighted sum shape mismatch".into()));
            }
            out.scaled_add_assign(t, w);
        }
        self.push(out, Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of scalar `loss` with respect to every node; index by [`Var`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(LremError::Shape(format!("backward from non-scalar {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            if !g.all_finite() {
                let what = node.label.clone().unwrap_or_else(|| node.op.name().to_string());
                return Err(LremError::NonFinite(format!("gradient of `{what}`")));
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shape_of = |v: Var| self.nodes[v.0].value.shape();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor)| {
            let slot = &mut grads[v.0];
            if slot.is_none() {
                let (r, c) = shape_of(v);
                *slot = Some(Tensor::zeros(r, c));
            }
            f(slot.as_mut().unwrap());
        };
        match &node.op {
            Op::Leaf => {}
            Op::Gather { table, ids } => acc(*table, &mut |t| {
                for (r, &id) in ids.iter().enumerate() {
                    axpy(1.0, g.row(r), t.row_mut(id as usize));
                }
            }),
            Op::Add(a, b) => {
                acc(*a, &mut |t| t.add_assign(g));
                acc(*b, &mut |t| t.add_assign(g));
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |t| t.add_assign(g));
                acc(*bias, &mut |t| {
                    for r in 0..g.rows {
                        axpy(1.0, g.row(r), &mut t.data);
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |t| matmul_bt_acc(g, vb, t));
                acc(*b, &mut |t| matmul_at_acc(va, g, t));
            }
            Op::MatMulBt { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |t| matmul_acc(g, vb, t));
                acc(*b, &mut |t| matmul_at_acc(g, va, t));
            }
            Op::Scale { x, c } => acc(*x, &mut |t| t.scaled_add_assign(g, *c)),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma);
                let n = xhat.cols;
                acc(*gamma, &mut |t| {
                    for r in 0..g.rows {
                        for c in 0..n {
                            t.data[c] += g.row(r)[c] * xhat.row(r)[c];
                        }
                    }
                });
                acc(*beta, &mut |t| {
                    for r in 0..g.rows {
                        axpy(1.0, g.row(r), &mut t.data);
                    }
                });
                acc(*x, &mut |t| {
                    let mut dxhat = vec![0.0; n];
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        for c in 0..n {
                            dxhat[c] = gr[c] * gam.data[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dot(&dxhat, xr) / n as f64;
                        let tr = t.row_mut(r);
                        for c in 0..n {
                            tr[c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let vx = self.value(*x);
                acc(*x, &mut |t| {
                    for ((o, &gi), &xi) in t.data.iter_mut().zip(&g.data).zip(&vx.data) {
                        *o += gi * gelu_grad(xi);
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let t = vq.rows;
                let d = vq.cols;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Tensor::zeros(t, d);
                let mut dk = Tensor::zeros(t, d);
                let mut dv = Tensor::zeros(t, d);
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..t {
                        let p = &probs[h][i];
                        let gi = &g.row(i)[off..off + dh];
                        // dp_ij = g_i · v_j ; ds = p ⊙ (dp - Σ p dp)
                        let mut dp = vec![0.0; p.len()];
                        let mut weighted = 0.0;
                        for (j, &pj) in p.iter().enumerate() {
                            if pj != 0.0 {
                                dp[j] = dot(gi, &vv.row(j)[off..off + dh]);
                                weighted += pj * dp[j];
                                axpy(pj, gi, &mut dv.data[j * d + off..j * d + off + dh]);
                            }
                        }
                        let qi: Vec<f64> = vq.row(i)[off..off + dh].to_vec();
                        for (j, &pj) in p.iter().enumerate() {
                            if pj != 0.0 {
                                let ds = pj * (dp[j] - weighted) * scale;
                                axpy(ds, &vk.row(j)[off..off + dh], &mut dq.data[i * d + off..i * d + off + dh]);
                                axpy(ds, &qi, &mut dk.data[j * d + off..j * d + off + dh]);
                            }
                        }
                    }
                }
                acc(*q, &mut |t| t.add_assign(&dq));
                acc(*k, &mut |t| t.add_assign(&dk));
                acc(*v, &mut |t| t.add_assign(&dv));
            }
            Op::SelectRows { x, rows } => acc(*x, &mut |t| {
                for (i, &r) in rows.iter().enumerate() {
                    axpy(1.0, g.row(i), t.row_mut(r));
                }
            }),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |t| axpy(1.0, &g.data[start..start + n], &mut t.data));
                    start += n;
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                acc(*x, &mut |t| {
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj = dot(yr, gr);
                        let tr = t.row_mut(r);
                        for c in 0..yr.len() {
                            tr[c] += (gr[c] - yr[c] * proj) / norms[r];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = g.item() / targets.len() as f64;
                acc(*logits, &mut |t| {
                    for (&(r, c), p) in targets.iter().zip(probs) {
                        let tr = t.row_mut(r);
                        axpy(scale, p, tr);
                        tr[c] -= scale;
                    }
                });
            }
            Op::LogProbGather { logits, targets, probs } => acc(*logits, &mut |t| {
                for (i, (&(r, c), p)) in targets.iter().zip(probs).enumerate() {
                    let gi = g.data[i];
                    let tr = t.row_mut(r);
                    axpy(-gi, p, tr);
                    tr[c] += gi;
                }
            }),
            Op::ClippedSurrogate { new_logps, ratios, advantages, active } => {
                let n = ratios.len() as f64;
                let gs = g.item();
                acc(*new_logps, &mut |t| {
                    for i in 0..ratios.len() {
                        if active[i] {
                            t.data[i] -= gs * advantages[i] * ratios[i] / n;
                        }
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |t| t.data.iter_mut().for_each(|v| *v += g.item())),
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, &mut |t| t.scaled_add_assign(g, w));
                }
            }
        }
    }
}

/// Per-node gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// One token's clipped-surrogate term: `(term, gradient flows, ratio)`.
pub fn surrogate_term(new_logp: f64, old_logp: f64, advantage: f64, eps: f64) -> (f64, bool, f64) {
    let ratio = (new_logp - old_logp).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true, ratio)
    } else {
        (clipped, false, ratio)
    }
}

/// Returns `(xhat, rstd)` for one row.
pub fn normalize_row(row: &[f64]) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    (row.iter().map(|v| (v - mean) * rstd).collect(), rstd)
}

/// Attention weights of query row `i` over keys `0..=i` (masked entries are 0).
pub fn attend_row<'k>(
    qi: &[f64],
    i: usize,
    key: impl Fn(usize) -> &'k [f64],
    scale: f64,
    mask: &dyn AttendMask,
) -> Vec<f64> {
    let mut scores = vec![f64::NEG_INFINITY; i + 1];
    let mut any = false;
    for (j, s) in scores.iter_mut().enumerate() {
        if mask.allowed(i, j) {
            *s = dot(qi, key(j)) * scale;
            any = true;
        }
    }
    if !any {
        return vec![0.0; i + 1];
    }
    let allowed: Vec<usize> = (0..=i).filter(|&j| mask.allowed(i, j)).collect();
    let sub: Vec<f64> = allowed.iter().map(|&j| scores[j]).collect();
    let p = softmax(&sub);
    let mut out = vec![0.0; i + 1];
    for (&j, pj) in allowed.iter().zip(p) {
        out[j] = pj;
    }
    out
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of `f` with respect to every entry of `inputs`.
    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let eval = |vals: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), "x").unwrap()).collect();
            let out = f(&mut tape, &vars);
            (tape.value(out).item(), tape, vars, out)
        };
        let (_, tape, vars, out) = eval(&inputs);
        let grads = tape.backward(out).unwrap();
        let h = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            for e in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data[e] += h;
                let mut minus = inputs.clone();
                minus[k].data[e] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = grads.get(vars[k]).map_or(0.0, |g| g.data[e]);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-6, "input {k} entry {e}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn gradcheck_dense_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![
            rand_tensor(&mut rng, 3, 4),
            rand_tensor(&mut rng, 4, 5),
            rand_tensor(&mut rng, 1, 5),
            rand_tensor(&mut rng, 1, 5),
        ];
        check(inputs, |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let y = t.add_bias(y, v[2]).unwrap();
            let y = t.gelu(y).unwrap();
            let y = t.layer_norm(y, v[3], v[2]).unwrap();
            let y2 = t.scale(y, 0.7).unwrap();
            let y = t.add(y, y2).unwrap();
            let n = t.l2_normalize_rows(y).unwrap();
            let s = t.matmul_bt(n, y).unwrap();
            t.cross_entropy(s, &[(0, 1), (2, 2), (1, 0)]).unwrap()
        });
    }

    #[test]
    fn gradcheck_attention_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            rand_tensor(&mut rng, 6, 4),
            rand_tensor(&mut rng, 4, 4),
            rand_tensor(&mut rng, 4, 4),
            rand_tensor(&mut rng, 4, 4),
        ];
        let pad = [false, false, false, false, true];
        check(inputs, move |t, v| {
            let x = t.gather(v[0], &[1, 3, 3, 0, 5]).unwrap();
            let q = t.matmul(x, v[1]).unwrap();
            let k = t.matmul(x, v[2]).unwrap();
            let vv = t.matmul(x, v[3]).unwrap();
            let mask = CausalPadMask { pad: Some(&pad) };
            let a = t.attention(q, k, vv, 2, &mask).unwrap();
            let rows = t.select_rows(a, &[4, 2]).unwrap();
            let both = t.concat_rows(&[rows, x]).unwrap();
            let lp = t.log_prob_gather(both, &[(0, 1), (3, 2), (5, 0)]).unwrap();
            let s = t.sum(lp).unwrap();
            let s2 = t.sum(both).unwrap();
            t.weighted_sum(&[(s, 1.3), (s2, -0.2)]).unwrap()
        });
    }

    #[test]
    fn gradcheck_clipped_surrogate() {
        let new = Tensor::from_vec(4, 1, vec![-0.5, -1.0, -2.0, -0.1]);
        let old = [-0.6, -0.2, -2.0, -0.9];
        let adv = [1.0, -1.0, 0.5, 1.0];
        check(vec![new], move |t, v| t.clipped_surrogate(v[0], &old, &adv, 0.2).unwrap());
    }

    #[test]
    fn surrogate_examples() {
        // ratio 2, A = 1: upper clip wins
        let (term, active, _) = surrogate_term(2f64.ln(), 0.0, 1.0, 0.2);
        assert!((term - 1.2).abs() < 1e-12);
        assert!(!active);
        // ratio 0.5, A = -1: min(-0.5, -0.8) = -0.8
        let (term, active, _) = surrogate_term(0.5f64.ln(), 0.0, -1.0, 0.2);
        assert!((term + 0.8).abs() < 1e-12);
        assert!(!active);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1e308), "big").unwrap();
        let err = t.scale(x, 10.0).unwrap_err();
        assert!(err.to_string().contains("scale"));
        assert!(t.leaf(Tensor::scalar(f64::NAN), "w").unwrap_err().to_string().contains("`w`"));
    }
}
