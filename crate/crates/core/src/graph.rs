//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] borrows the parameter store for one forward/backward pass and
//! records every operation in creation order, so the node list is already a
//! topological order and [`Graph::backward`] simply walks it in reverse.
//! Values are never mutated after they are recorded.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    self, check_axis, check_permutation, concat_raw, concat_shape, ensure_finite, gemm_nn,
    gemm_nt, gemm_tn, layer_norm_raw, matmul_with_plan, permute_raw, plan_matmul,
    MatmulPlan, Shape, Tensor,
};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

enum Op {
    Constant,
    Input,
    Param,
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
        plan: MatmulPlan,
    },
    /// `a + b`, where `b`'s shape is a suffix of `a`'s and is tiled.
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Relu { x: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat { inputs: Vec<Var>, axis: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Gather { table: Var, indices: Vec<usize> },
    Repeat { x: Var, times: usize },
    MeanAxis { x: Var, axis: usize },
    Sum { x: Var },
    CrossEntropy {
        probs: Var,
        /// `(row, label)` pairs that contribute to the loss.
        rows: Vec<(usize, usize)>,
        smoothing: f64,
    },
    Hinge {
        scores: Var,
        positive: usize,
        margin: f64,
    },
    SquaredError { x: Var, target: f64 },
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Per-call statistics of a cross-entropy node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossInfo {
    /// Target positions whose probability had to be clamped at [`PROB_FLOOR`].
    pub clamped: usize,
    /// Positions that contributed (PAD labels are skipped).
    pub counted: usize,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
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

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        for slot in self.param_vars.iter_mut() {
            if matches!(slot, Some(v) if v.0 >= len) {
                *slot = None;
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    /// A value that never receives gradients (data, masks, frozen features).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf that receives a gradient without being a stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// The leaf backed by a stored parameter. Repeated calls return the same
    /// node, so every use of a shared weight accumulates into one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let p = self.params.parameter(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.value),
            op: Op::Param,
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let plan = plan_matmul(self.shape(a), self.shape(b), transpose_b)?;
        let out = matmul_with_plan(self.value(a).data(), self.value(b).data(), &plan, transpose_b);
        ensure_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts_unchecked(plan.out, out),
            Op::MatMul {
                a,
                b,
                transpose_b,
                plan,
            },
            rg,
        ))
    }

    /// `a · b` over the last two axes; a plain matrix broadcasts over batches.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Elementwise sum; `b` may have fewer leading axes and is tiled.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let suffix_ok = sb.rank() <= sa.rank() && sa.dims()[sa.rank() - sb.rank()..] == *sb.dims();
        if !suffix_ok {
            return Err(Error::Shape {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let bd = self.value(b).data();
        let nb = bd.len();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bd[i % nb])
            .collect();
        ensure_finite("add", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts_unchecked(sa, out), Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        ensure_finite("mul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts_unchecked(sa, out), Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * factor).collect();
        ensure_finite("scale", &out)?;
        let s = self.shape(x);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts_unchecked(s, out), Op::Scale { x, factor }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = tensor::relu(self.value(x));
        let rg = self.rg(x);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = tensor::softmax(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let d = sx.last();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gain),
            });
        }
        let (out, cache) = layer_norm_raw(
            self.value(x).data(),
            d,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        ensure_finite("layer_norm", &out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts_unchecked(sx, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: cache.xhat,
                inv_std: cache.inv_std,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<Shape> = inputs.iter().map(|&v| self.shape(v)).collect();
        let out_shape = concat_shape(&shapes, axis)?;
        let parts: Vec<(&[f64], Shape)> = inputs
            .iter()
            .map(|&v| (self.value(v).data(), self.shape(v)))
            .collect();
        let out = concat_raw(&parts, axis, out_shape);
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts_unchecked(out_shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        let out_shape = check_permutation(s, axes)?;
        let out = permute_raw(self.value(x).data(), s, axes, out_shape);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts_unchecked(out_shape, out),
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(dims)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Row lookup: `table` is `[n, d]`, output is `[indices.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                detail: alloc::format!("table must be a matrix, got {st}"),
            });
        }
        let (n, d) = (st.dims()[0], st.dims()[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::Vocabulary { index: i, size: n });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let shape = Shape::new(&[indices.len(), d])?;
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, out),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks `times` copies of `x` along a new leading axis.
    pub fn repeat(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x);
        let mut dims = vec![times];
        dims.extend_from_slice(s.dims());
        let shape = Shape::new(&dims)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * times);
        for _ in 0..times {
            out.extend_from_slice(src);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts_unchecked(shape, out), Op::Repeat { x, times }, rg))
    }

    /// Mean along `axis`, keeping it as an extent-one axis.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x);
        check_axis("mean_axis", s, axis)?;
        let (outer, len, inner) = s.split_at_axis(axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + t) * inner + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= len as f64;
        }
        let mut dims = s.dims().to_vec();
        dims[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts_unchecked(Shape::new(&dims)?, out),
            Op::MeanAxis { x, axis },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::from_parts_unchecked(Shape::scalar(), vec![total]), Op::Sum { x }, rg)
    }

    /// Mean (label-smoothed) cross-entropy of probability rows against
    /// `labels`. Rows whose label equals `skip` are excluded.
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        labels: &[usize],
        smoothing: f64,
        skip: Option<usize>,
    ) -> Result<(Var, LossInfo)> {
        let s = self.shape(probs);
        let vocab = s.last();
        let nrows = s.numel() / vocab.max(1);
        if labels.len() != nrows {
            return Err(contract(alloc::format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                nrows
            )));
        }
        if !(0.0..1.0).contains(&smoothing) || (smoothing > 0.0 && vocab < 2) {
            return Err(contract(alloc::format!("invalid label smoothing {smoothing}")));
        }
        let p = self.value(probs).data();
        let mut rows = Vec::new();
        let mut info = LossInfo::default();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if Some(y) == skip {
                continue;
            }
            if y >= vocab {
                return Err(Error::Vocabulary { index: y, size: vocab });
            }
            rows.push((r, y));
            let row = &p[r * vocab..(r + 1) * vocab];
            if row[y] < PROB_FLOOR {
                info.clamped += 1;
            }
            total += smoothed_row_loss(row, y, smoothing);
        }
        info.counted = rows.len();
        if rows.is_empty() {
            return Err(contract("cross_entropy: every position is padding"));
        }
        let loss = total / rows.len() as f64;
        ensure_finite("cross_entropy", &[loss])?;
        let rg = self.rg(probs);
        let v = self.push(
            Tensor::from_parts_unchecked(Shape::scalar(), vec![loss]),
            Op::CrossEntropy {
                probs,
                rows,
                smoothing,
            },
            rg,
        );
        Ok((v, info))
    }

    /// `Σₙ max(0, margin − (s[positive] − s[n]))` over every `n ≠ positive`.
    pub fn hinge(&mut self, scores: Var, positive: usize, margin: f64) -> Result<Var> {
        let s = self.value(scores).data();
        if positive >= s.len() {
            return Err(contract("hinge: positive index out of range"));
        }
        let pos = s[positive];
        let total: f64 = s
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != positive)
            .map(|(_, &neg)| (margin - (pos - neg)).max(0.0))
            .sum();
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::from_parts_unchecked(Shape::scalar(), vec![total]),
            Op::Hinge {
                scores,
                positive,
                margin,
            },
            rg,
        ))
    }

    /// `(x − target)²` for a one-element `x`.
    pub fn squared_error(&mut self, x: Var, target: f64) -> Result<Var> {
        let v = self.value(x).item()?;
        let out = (v - target) * (v - target);
        ensure_finite("squared_error", &[out])?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts_unchecked(Shape::scalar(), vec![out]),
            Op::SquaredError { x, target },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss` through every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(contract(alloc::format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            ensure_finite("backward", g)?;
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul {
                a,
                b,
                transpose_b,
                plan,
            } => {
                let MatmulPlan { batch, m, k, n, .. } = *plan;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    let ga = grad_slot(grads, *a, av.len());
                    for s in 0..batch {
                        let ao = if plan.a_batched { s * m * k } else { 0 };
                        let bo = if plan.b_batched { s * k * n } else { 0 };
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let bs = &bv[bo..bo + k * n];
                        let gas = &mut ga[ao..ao + m * k];
                        if *transpose_b {
                            gemm_nn(gs, bs, gas, m, n, k);
                        } else {
                            gemm_nt(gs, bs, gas, m, n, k);
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = grad_slot(grads, *b, bv.len());
                    for s in 0..batch {
                        let ao = if plan.a_batched { s * m * k } else { 0 };
                        let bo = if plan.b_batched { s * k * n } else { 0 };
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let as_ = &av[ao..ao + m * k];
                        let gbs = &mut gb[bo..bo + k * n];
                        if *transpose_b {
                            gemm_tn(gs, as_, gbs, m, n, k);
                        } else {
                            gemm_tn(as_, gs, gbs, m, k, n);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    let ga = grad_slot(grads, *a, g.len());
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if self.rg(*b) {
                    let nb = self.value(*b).numel();
                    let gb = grad_slot(grads, *b, nb);
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    let ga = grad_slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.rg(*b) {
                    let gb = grad_slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                let gx = grad_slot(grads, *x, g.len());
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += factor * b;
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let gx = grad_slot(grads, *x, g.len());
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = out.data();
                let (outer, len, inner) = out.shape().split_at_axis(*axis);
                let gx = grad_slot(grads, *x, g.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for t in 0..len {
                            let j = base + t * inner;
                            dot += g[j] * y[j];
                        }
                        for t in 0..len {
                            let j = base + t * inner;
                            gx[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.shape().last();
                let rows = g.len() / d;
                let gv = self.value(*gain).data();
                if self.rg(*gain) {
                    let gg = grad_slot(grads, *gain, d);
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = grad_slot(grads, *bias, d);
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = grad_slot(grads, *x, g.len());
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..d {
                            let v = g[r * d + c] * gv[c];
                            dxhat[c] = v;
                            sum_d += v;
                            sum_dx += v * xhat[r * d + c];
                        }
                        let scale = inv_std[r] / d as f64;
                        for c in 0..d {
                            gx[r * d + c] +=
                                scale * (d as f64 * dxhat[c] - sum_d - xhat[r * d + c] * sum_dx);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = out.shape().split_at_axis(*axis);
                let mut offset = 0;
                let row = out.shape().dims()[*axis] * inner;
                for &v in inputs {
                    let chunk = self.shape(v).dims()[*axis] * inner;
                    if self.rg(v) {
                        let gv = grad_slot(grads, v, outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (a, b) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let back = permute_raw(g, out.shape(), &inverse, self.shape(*x));
                let gx = grad_slot(grads, *x, g.len());
                for (a, b) in gx.iter_mut().zip(&back) {
                    *a += b;
                }
            }
            Op::Reshape { x } => {
                let gx = grad_slot(grads, *x, g.len());
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::Gather { table, indices } => {
                let n = self.value(*table).numel();
                let d = out.shape().last();
                let gt = grad_slot(grads, *table, n);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        gt[i * d + c] += g[r * d + c];
                    }
                }
            }
            Op::Repeat { x, times } => {
                let n = self.value(*x).numel();
                let gx = grad_slot(grads, *x, n);
                for t in 0..*times {
                    for (a, b) in gx.iter_mut().zip(&g[t * n..(t + 1) * n]) {
                        *a += b;
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let s = self.shape(*x);
                let (outer, len, inner) = s.split_at_axis(*axis);
                let gx = grad_slot(grads, *x, s.numel());
                let w = 1.0 / len as f64;
                for o in 0..outer {
                    for t in 0..len {
                        for i in 0..inner {
                            gx[(o * len + t) * inner + i] += w * g[o * inner + i];
                        }
                    }
                }
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                let gx = grad_slot(grads, *x, n);
                for a in gx.iter_mut() {
                    *a += g[0];
                }
            }
            Op::CrossEntropy {
                probs,
                rows,
                smoothing,
            } => {
                let p = self.value(*probs).data();
                let vocab = self.shape(*probs).last();
                let scale = g[0] / rows.len() as f64;
                let off = if vocab > 1 { smoothing / (vocab - 1) as f64 } else { 0.0 };
                let gp = grad_slot(grads, *probs, p.len());
                for &(r, y) in rows {
                    for v in 0..vocab {
                        let target = if v == y { 1.0 - smoothing } else { off };
                        let pv = p[r * vocab + v];
                        if target > 0.0 && pv >= PROB_FLOOR {
                            gp[r * vocab + v] -= scale * target / pv;
                        }
                    }
                }
            }
            Op::Hinge {
                scores,
                positive,
                margin,
            } => {
                let s = self.value(*scores).data();
                let pos = s[*positive];
                let gs = grad_slot(grads, *scores, s.len());
                for (i, &neg) in s.iter().enumerate() {
                    if i != *positive && margin - (pos - neg) > 0.0 {
                        gs[i] += g[0];
                        gs[*positive] -= g[0];
                    }
                }
            }
            Op::SquaredError { x, target } => {
                let v = self.value(*x).data()[0];
                let gx = grad_slot(grads, *x, 1);
                gx[0] += g[0] * 2.0 * (v - target);
            }
        }
    }
}

fn smoothed_row_loss(row: &[f64], y: usize, smoothing: f64) -> f64 {
    let vocab = row.len();
    if smoothing == 0.0 {
        return -math::ln(row[y].max(PROB_FLOOR));
    }
    let off = smoothing / (vocab - 1) as f64;
    row.iter()
        .enumerate()
        .map(|(v, &p)| {
            let t = if v == y { 1.0 - smoothing } else { off };
            -t * math::ln(p.max(PROB_FLOOR))
        })
        .sum()
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient with respect to any recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars[id.index()].and_then(|v| self.wrt(v))
    }

    /// Adds every parameter gradient into `buffers` (one per parameter).
    pub fn accumulate_into(&self, buffers: &mut [Vec<f64>]) {
        self.accumulate_scaled(buffers, 1.0);
    }

    /// Adds `factor ×` every parameter gradient into `buffers`.
    pub fn accumulate_scaled(&self, buffers: &mut [Vec<f64>], factor: f64) {
        for (i, buf) in buffers.iter_mut().enumerate() {
            if let Some(g) = self.param(ParamId(i)) {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += factor * b;
                }
            }
        }
    }
}
