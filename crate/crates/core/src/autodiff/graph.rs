//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape, so node indices are already a
//! topological order; `backward` walks them once in reverse. Nodes whose inputs
//! do not require gradients are never visited, which keeps the backward pass
//! cheap when only a handful of parameters are trainable.

use super::tensor::{axis_split, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Result, WattError};

/// Added to the variance before the square root in `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Scale(Var, f64),
    Gelu(Var),
    Sum {
        x: Var,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        axis: usize,
        norms: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    BroadcastLeading {
        x: Var,
        copies: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Values of every node stay alive until the graph is dropped.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf that was created with `requires_grad = true`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(WattError::invalid(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- linear algebra

    /// `a[.., m, k] @ b[k, n]` (shared right operand) or `a[.., m, k] @ b[.., k, n]`
    /// with identical leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(WattError::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_rhs = lead_b.is_empty();
        if k != kb || (!shared_rhs && lead_a != lead_b) {
            return Err(WattError::shape("matmul", &sa, &sb));
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        if shared_rhs {
            gemm_acc(da, db, &mut out, batch * m, k, n);
        } else {
            for bi in 0..batch {
                gemm_acc(
                    &da[bi * m * k..(bi + 1) * m * k],
                    &db[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            rg,
        ))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(WattError::invalid(format!("transpose needs ndim >= 2, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch: usize = s[..s.len() - 2].iter().product();
        let out = transpose_last2(self.data(x), batch, r, c);
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([c, r]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| WattError::invalid("concat of zero tensors"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(WattError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let s = self.shape(x).to_vec();
        if start + len > s[axis] {
            return Err(WattError::invalid(format!(
                "slice {start}..{} exceeds axis {axis} of shape {s:?}",
                start + len
            )));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// Rows of a 2-D `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(WattError::invalid(format!("gather_rows needs a 2-D table, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(WattError::invalid(format!("row id {bad} out of range for {rows} rows")));
        }
        let d = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&d[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), cols], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Repeats `x` along a new leading dimension of size `copies`.
    pub fn broadcast_leading(&mut self, x: Var, copies: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = self.data(x);
        let mut out = Vec::with_capacity(copies * d.len());
        for _ in 0..copies {
            out.extend_from_slice(d);
        }
        let mut shape = vec![copies];
        shape.extend(s);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::BroadcastLeading { x, copies }, rg))
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(WattError::shape(op, sa, sb));
        }
        let (da, db) = (self.data(a), self.data(b));
        let nb = db.len();
        let out: Vec<f64> = da.iter().enumerate().map(|(i, &x)| f(x, db[i % nb])).collect();
        let shape = sa.to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, make(a, b), rg))
    }

    /// Elementwise sum; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        let value = Tensor::new(shape, out).expect("unary op preserves element count");
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    // ---------------------------------------------------------------- reductions

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check_axis(if mean { "mean" } else { "sum" }, x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            let inv = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(&[x]);
        let op = if mean {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg)
    }

    // ---------------------------------------------------------------- normalization

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| d[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..n).map(|j| (d[idx(j)] - max).exp()).sum();
                let log_denom = denom.ln();
                for j in 0..n {
                    let shifted = d[idx(j)] - max;
                    out[idx(j)] = if log {
                        shifted - log_denom
                    } else {
                        shifted.exp() / denom
                    };
                }
            }
        }
        let rg = self.rg(&[x]);
        let op = if log {
            Op::LogSoftmax { x, axis }
        } else {
            Op::Softmax { x, axis }
        };
        Ok(self.push(Tensor::new(s, out)?, op, rg))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    /// Layer normalization along `axis` with population variance and
    /// [`LAYER_NORM_EPS`]; `gamma` and `beta` have shape `[len(axis)]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        self.check_axis("layer_norm", x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&s, axis);
        if n == 0 {
            return Err(WattError::invalid("layer_norm over an empty axis"));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(WattError::shape("layer_norm", &s, self.shape(p)));
            }
        }
        let d = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut normed = vec![0.0; d.len()];
        let mut rstd = vec![0.0; outer * inner];
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| d[idx(j)]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|j| {
                        let c = d[idx(j)] - mean;
                        c * c
                    })
                    .sum::<f64>()
                    / n as f64;
                let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[o * inner + i] = r;
                for j in 0..n {
                    let xh = (d[idx(j)] - mean) * r;
                    normed[idx(j)] = xh;
                    out[idx(j)] = xh * g[j] + b[j];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(s, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                normed,
                rstd,
            },
            rg,
        ))
    }

    /// Divides each slice along `axis` by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2_normalize", x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut norms = vec![0.0; outer * inner];
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let norm = (0..n)
                    .map(|j| d[idx(j)] * d[idx(j)])
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                norms[o * inner + i] = norm;
                for j in 0..n {
                    out[idx(j)] = d[idx(j)] / norm;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(s, out)?, Op::L2Normalize { x, axis, norms }, rg))
    }

    // ---------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`. Every leaf created with
    /// `requires_grad = true` receives a gradient (zeros when unreachable).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(WattError::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[i].is_none() {
                    grads[i] = Some(vec![0.0; node.value.numel()]);
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        // Single-input ops whose gradient is written through `slot` directly.
        let single = match &node.op {
            &Op::Sum { x, .. }
            | &Op::Mean { x, .. }
            | &Op::Softmax { x, .. }
            | &Op::LogSoftmax { x, .. }
            | &Op::Slice { x, .. }
            | &Op::BroadcastLeading { x, .. } => Some(x),
            Op::GatherRows { table, .. } => Some(*table),
            Op::L2Normalize { x, .. } => Some(*x),
            _ => None,
        };
        if single.is_some_and(|x| !self.requires_grad(x)) {
            return;
        }
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (da, db) = (self.data(a), self.data(b));
                if self.requires_grad(a) {
                    let ga = slot(grads, a, da.len());
                    if shared_rhs {
                        gemm_nt_acc(gout, db, ga, batch * m, n, k);
                    } else {
                        for bi in 0..batch {
                            gemm_nt_acc(
                                &gout[bi * m * n..(bi + 1) * m * n],
                                &db[bi * k * n..(bi + 1) * k * n],
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                }
                if self.requires_grad(b) {
                    let gb = slot(grads, b, db.len());
                    if shared_rhs {
                        gemm_tn_acc(da, gout, gb, batch * m, k, n);
                    } else {
                        for bi in 0..batch {
                            gemm_tn_acc(
                                &da[bi * m * k..(bi + 1) * m * k],
                                &gout[bi * m * n..(bi + 1) * m * n],
                                &mut gb[bi * k * n..(bi + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                self.acc_elementwise(grads, a, gout, |g, _| g);
                self.acc_suffix(grads, b, gout, |g, _| g);
            }
            &Op::Sub(a, b) => {
                self.acc_elementwise(grads, a, gout, |g, _| g);
                self.acc_suffix(grads, b, gout, |g, _| -g);
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                let nb = db.len();
                self.acc_elementwise(grads, a, gout, |g, i| g * db[i % nb]);
                self.acc_suffix(grads, b, gout, |g, i| g * da[i]);
            }
            &Op::Div(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                let nb = db.len();
                self.acc_elementwise(grads, a, gout, |g, i| g / db[i % nb]);
                self.acc_suffix(grads, b, gout, |g, i| {
                    let y = db[i % nb];
                    -g * da[i] / (y * y)
                });
            }
            &Op::Exp(x) => self.acc_elementwise(grads, x, gout, |g, i| g * out[i]),
            &Op::Log(x) => {
                let dx = self.data(x);
                self.acc_elementwise(grads, x, gout, |g, i| g / dx[i]);
            }
            &Op::Sqrt(x) => self.acc_elementwise(grads, x, gout, |g, i| g / (2.0 * out[i])),
            &Op::Scale(x, c) => self.acc_elementwise(grads, x, gout, |g, _| g * c),
            &Op::Gelu(x) => {
                let dx = self.data(x);
                self.acc_elementwise(grads, x, gout, |g, i| {
                    let v = dx[i];
                    let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                    g * (0.5 * (1.0 + t) + 0.5 * v * dt)
                });
            }
            &Op::Sum { x, axis } | &Op::Mean { x, axis } => {
                let s = self.shape(x);
                let (outer, n, inner) = axis_split(s, axis);
                let factor = if matches!(node.op, Op::Mean { .. }) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gx = slot(grads, x, outer * n * inner);
                for o in 0..outer {
                    for j in 0..n {
                        let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, &g) in dst.iter_mut().zip(&gout[o * inner..(o + 1) * inner]) {
                            *d += g * factor;
                        }
                    }
                }
            }
            &Op::SumAll(x) => {
                let g = gout[0];
                let ones = vec![g; self.value(x).numel()];
                self.acc_elementwise(grads, x, &ones, |g, _| g);
            }
            &Op::Softmax { x, axis } | &Op::LogSoftmax { x, axis } => {
                let log = matches!(node.op, Op::LogSoftmax { .. });
                let s = self.shape(x);
                let (outer, n, inner) = axis_split(s, axis);
                let gx = slot(grads, x, out.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        if log {
                            let total: f64 = (0..n).map(|j| gout[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] += gout[idx(j)] - out[idx(j)].exp() * total;
                            }
                        } else {
                            let dot: f64 = (0..n).map(|j| gout[idx(j)] * out[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] += out[idx(j)] * (gout[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                normed,
                rstd,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let s = self.shape(x);
                let (outer, n, inner) = axis_split(s, *axis);
                if self.requires_grad(gamma) {
                    let gg = slot(grads, gamma, n);
                    for (e, (&g, &xh)) in gout.iter().zip(normed.iter()).enumerate() {
                        gg[(e / inner) % n] += g * xh;
                    }
                }
                if self.requires_grad(beta) {
                    let gb = slot(grads, beta, n);
                    for (e, &g) in gout.iter().enumerate() {
                        gb[(e / inner) % n] += g;
                    }
                }
                if self.requires_grad(x) {
                    let gam = self.data(gamma);
                    let gx = slot(grads, x, out.len());
                    let inv_n = 1.0 / n as f64;
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let mut mean_g = 0.0;
                            let mut mean_gx = 0.0;
                            for j in 0..n {
                                let gh = gout[idx(j)] * gam[j];
                                mean_g += gh;
                                mean_gx += gh * normed[idx(j)];
                            }
                            mean_g *= inv_n;
                            mean_gx *= inv_n;
                            let r = rstd[o * inner + i];
                            for j in 0..n {
                                let gh = gout[idx(j)] * gam[j];
                                gx[idx(j)] += r * (gh - mean_g - normed[idx(j)] * mean_gx);
                            }
                        }
                    }
                }
            }
            Op::L2Normalize { x, axis, norms } => {
                let x = *x;
                let s = self.shape(x);
                let (outer, n, inner) = axis_split(s, *axis);
                let gx = slot(grads, x, out.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| gout[idx(j)] * out[idx(j)]).sum();
                        let norm = norms[o * inner + i];
                        for j in 0..n {
                            gx[idx(j)] += (gout[idx(j)] - out[idx(j)] * dot) / norm;
                        }
                    }
                }
            }
            &Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch: usize = s[..s.len() - 2].iter().product();
                let back = transpose_last2(gout, batch, r, c);
                self.acc_elementwise(grads, x, &back, |g, _| g);
            }
            &Op::Reshape(x) => self.acc_elementwise(grads, x, gout, |g, _| g),
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let (outer, total, inner) = axis_split(s, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.requires_grad(v) {
                        let gv = slot(grads, v, outer * n * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for (d, &g) in gv[o * n * inner..(o + 1) * n * inner]
                                .iter_mut()
                                .zip(&gout[src..src + n * inner])
                            {
                                *d += g;
                            }
                        }
                    }
                    offset += n;
                }
            }
            &Op::Slice { x, axis, start } => {
                let s = self.shape(x);
                let (outer, n, inner) = axis_split(s, axis);
                let len = node.value.shape()[axis];
                let gx = slot(grads, x, outer * n * inner);
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    for (d, &g) in gx[base..base + len * inner]
                        .iter_mut()
                        .zip(&gout[o * len * inner..(o + 1) * len * inner])
                    {
                        *d += g;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let table = *table;
                let cols = self.shape(table)[1];
                let gt = slot(grads, table, self.value(table).numel());
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &g) in gt[id * cols..(id + 1) * cols]
                        .iter_mut()
                        .zip(&gout[r * cols..(r + 1) * cols])
                    {
                        *d += g;
                    }
                }
            }
            &Op::BroadcastLeading { x, copies } => {
                let n = self.value(x).numel();
                let gx = slot(grads, x, n);
                for c in 0..copies {
                    for (d, &g) in gx.iter_mut().zip(&gout[c * n..(c + 1) * n]) {
                        *d += g;
                    }
                }
            }
        }
    }

    fn acc_elementwise(&self, grads: &mut [Option<Vec<f64>>], x: Var, gout: &[f64], f: impl Fn(f64, usize) -> f64) {
        if !self.requires_grad(x) {
            return;
        }
        let gx = slot(grads, x, gout.len());
        for (i, (d, &g)) in gx.iter_mut().zip(gout).enumerate() {
            *d += f(g, i);
        }
    }

    /// Accumulates into an operand that was broadcast over leading dimensions.
    fn acc_suffix(&self, grads: &mut [Option<Vec<f64>>], b: Var, gout: &[f64], f: impl Fn(f64, usize) -> f64) {
        if !self.requires_grad(b) {
            return;
        }
        let nb = self.value(b).numel();
        let gb = slot(grads, b, nb);
        for (i, &g) in gout.iter().enumerate() {
            gb[i % nb] += f(g, i);
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn transpose_last2(d: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for bi in 0..batch {
        let src = &d[bi * r * c..(bi + 1) * r * c];
        let dst = &mut out[bi * r * c..(bi + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}
