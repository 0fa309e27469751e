//! Dense row-major `f64` tensors of rank at most four, plus the forward
//! kernels the autodiff graph builds on.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

pub const MAX_RANK: usize = 4;

/// Extents of a tensor. Rank 0 is a scalar with one element.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; MAX_RANK],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(Error::InvalidShape {
                op: "shape",
                detail: alloc::format!("rank {} exceeds {}", dims.len(), MAX_RANK),
            });
        }
        let mut out = [0; MAX_RANK];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Shape {
            dims: out,
            rank: dims.len(),
        })
    }

    pub fn scalar() -> Self {
        Shape {
            dims: [0; MAX_RANK],
            rank: 0,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Extent of the last axis (1 for scalars).
    pub fn last(&self) -> usize {
        if self.rank == 0 {
            1
        } else {
            self.dims[self.rank - 1]
        }
    }

    /// Product of all extents before `axis`, the extent at `axis`, and the
    /// product of all extents after it.
    pub(crate) fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let d = self.dims();
        let outer = d[..axis].iter().product();
        let inner = d[axis + 1..].iter().product();
        (outer, d[axis], inner)
    }

    fn strides(&self) -> [usize; MAX_RANK] {
        let mut strides = [0; MAX_RANK];
        let mut acc = 1;
        for i in (0..self.rank).rev() {
            strides[i] = acc;
            acc *= self.dims[i];
        }
        strides
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, rejecting a length mismatch or any non-finite value.
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: alloc::format!("{} needs {} values, got {}", shape, shape.numel(), data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::from_shape(Shape::scalar(), vec![value])
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, vec![value; shape.numel()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Only parameter storage and
    /// optimizers write through this.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let strides = self.shape.strides();
        let flat: usize = index.iter().zip(strides.iter()).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "item() on tensor of shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Row `i` of the flattened `[numel / last, last]` view.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape.last();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

// ---- matrix kernels (row-major, accumulate into `c`) ----

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Batch layout of a (possibly broadcast) matmul.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out: Shape,
}

/// Plans `a · b` (or `a · bᵀ` over the last two axes when `transpose_b`).
/// Leading batch extents must match unless one side is a plain matrix.
pub(crate) fn plan_matmul(a: Shape, b: Shape, transpose_b: bool) -> Result<MatmulPlan> {
    let mismatch = || Error::Shape {
        op: "matmul",
        lhs: a,
        rhs: b,
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let ad = a.dims();
    let bd = b.dims();
    let (m, k) = (ad[a.rank() - 2], ad[a.rank() - 1]);
    let (bk, n) = if transpose_b {
        (bd[b.rank() - 1], bd[b.rank() - 2])
    } else {
        (bd[b.rank() - 2], bd[b.rank() - 1])
    };
    if k != bk {
        return Err(mismatch());
    }
    let a_batch = &ad[..a.rank() - 2];
    let b_batch = &bd[..b.rank() - 2];
    let (batch_dims, a_batched, b_batched) = if a_batch == b_batch {
        (a_batch, !a_batch.is_empty(), !b_batch.is_empty())
    } else if b_batch.is_empty() {
        (a_batch, true, false)
    } else if a_batch.is_empty() {
        (b_batch, false, true)
    } else {
        return Err(mismatch());
    };
    let mut out_dims: Vec<usize> = batch_dims.to_vec();
    out_dims.push(m);
    out_dims.push(n);
    Ok(MatmulPlan {
        batch: batch_dims.iter().product(),
        a_batched,
        b_batched,
        m,
        k,
        n,
        out: Shape::new(&out_dims)?,
    })
}

pub(crate) fn matmul_with_plan(a: &[f64], b: &[f64], plan: &MatmulPlan, transpose_b: bool) -> Vec<f64> {
    let MatmulPlan { batch, m, k, n, .. } = *plan;
    let mut out = vec![0.0; batch * m * n];
    for s in 0..batch {
        let ao = if plan.a_batched { s * m * k } else { 0 };
        let bo = if plan.b_batched { s * k * n } else { 0 };
        let asl = &a[ao..ao + m * k];
        let bsl = &b[bo..bo + k * n];
        let csl = &mut out[s * m * n..(s + 1) * m * n];
        if transpose_b {
            gemm_nt(asl, bsl, csl, m, k, n);
        } else {
            gemm_nn(asl, bsl, csl, m, k, n);
        }
    }
    out
}

/// Matrix product over the last two axes with batch broadcasting.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let plan = plan_matmul(a.shape, b.shape, false)?;
    let out = matmul_with_plan(&a.data, &b.data, &plan, false);
    ensure_finite("matmul", &out)?;
    Ok(Tensor::from_parts_unchecked(plan.out, out))
}

pub(crate) fn check_axis(op: &'static str, shape: Shape, axis: usize) -> Result<()> {
    if axis >= shape.rank() {
        return Err(Error::InvalidShape {
            op,
            detail: alloc::format!("axis {axis} out of range for {shape}"),
        });
    }
    Ok(())
}

pub(crate) fn softmax_raw(x: &[f64], shape: Shape, axis: usize) -> Vec<f64> {
    let (outer, len, inner) = shape.split_at_axis(axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for t in 0..len {
                max = max.max(x[base + t * inner]);
            }
            let mut sum = 0.0;
            for t in 0..len {
                let e = math::exp(x[base + t * inner] - max);
                out[base + t * inner] = e;
                sum += e;
            }
            for t in 0..len {
                out[base + t * inner] /= sum;
            }
        }
    }
    out
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x.shape, axis)?;
    ensure_finite("softmax input", &x.data)?;
    let out = softmax_raw(&x.data, x.shape, axis);
    ensure_finite("softmax", &out)?;
    Ok(Tensor::from_parts_unchecked(x.shape, out))
}

/// Normalized values and reciprocal standard deviations per row, kept for
/// the backward pass.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_raw(
    x: &[f64],
    width: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / width;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let is = 1.0 / math::sqrt(var + eps);
        inv_std[r] = is;
        for c in 0..width {
            let h = (row[c] - mean) * is;
            xhat[r * width + c] = h;
            out[r * width + c] = h * gain[c] + bias[c];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes each slice along the last axis to zero mean and unit
/// variance, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.shape.last();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape,
            rhs: gain.shape,
        });
    }
    let (out, _) = layer_norm_raw(&x.data, d, &gain.data, &bias.data, eps);
    ensure_finite("layer_norm", &out)?;
    Ok(Tensor::from_parts_unchecked(x.shape, out))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|v| v.max(0.0)).collect();
    Tensor::from_parts_unchecked(x.shape, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "add",
            lhs: a.shape,
            rhs: b.shape,
        });
    }
    let data: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    ensure_finite("add", &data)?;
    Ok(Tensor::from_parts_unchecked(a.shape, data))
}

pub(crate) fn concat_shape(shapes: &[Shape], axis: usize) -> Result<Shape> {
    let first = *shapes.first().ok_or_else(|| Error::InvalidShape {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    check_axis("concat", first, axis)?;
    let mut dims: Vec<usize> = first.dims().to_vec();
    dims[axis] = 0;
    for s in shapes {
        let ok = s.rank() == first.rank()
            && s.dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(Error::Shape {
                op: "concat",
                lhs: first,
                rhs: *s,
            });
        }
        dims[axis] += s.dims()[axis];
    }
    Shape::new(&dims)
}

pub(crate) fn concat_raw(parts: &[(&[f64], Shape)], axis: usize, out_shape: Shape) -> Vec<f64> {
    let (outer, _, inner) = out_shape.split_at_axis(axis);
    let mut out = Vec::with_capacity(out_shape.numel());
    for o in 0..outer {
        for (data, shape) in parts {
            let chunk = shape.dims()[axis] * inner;
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let shapes: Vec<Shape> = tensors.iter().map(|t| t.shape).collect();
    let out_shape = concat_shape(&shapes, axis)?;
    let parts: Vec<(&[f64], Shape)> = tensors.iter().map(|t| (t.data(), t.shape)).collect();
    Ok(Tensor::from_parts_unchecked(out_shape, concat_raw(&parts, axis, out_shape)))
}

pub(crate) fn check_permutation(shape: Shape, axes: &[usize]) -> Result<Shape> {
    let rank = shape.rank();
    let mut seen = [false; MAX_RANK];
    if axes.len() != rank {
        return Err(Error::InvalidShape {
            op: "permute",
            detail: alloc::format!("{} axes given for {}", axes.len(), shape),
        });
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::InvalidShape {
                op: "permute",
                detail: alloc::format!("invalid permutation {axes:?} for {shape}"),
            });
        }
        seen[a] = true;
    }
    let dims: Vec<usize> = axes.iter().map(|&a| shape.dims()[a]).collect();
    Shape::new(&dims)
}

/// Output axis `i` takes input axis `axes[i]`.
pub(crate) fn permute_raw(x: &[f64], shape: Shape, axes: &[usize], out_shape: Shape) -> Vec<f64> {
    let rank = shape.rank();
    let in_strides = shape.strides();
    let mut src_strides = [0usize; MAX_RANK];
    let mut out_dims = [1usize; MAX_RANK];
    for i in 0..rank {
        src_strides[i] = in_strides[axes[i]];
        out_dims[i] = out_shape.dims()[i];
    }
    let mut out = Vec::with_capacity(x.len());
    // Always iterate four nested levels; unused levels have extent one.
    let off = MAX_RANK - rank;
    let mut d = [1usize; MAX_RANK];
    let mut s = [0usize; MAX_RANK];
    for i in 0..rank {
        d[off + i] = out_dims[i];
        s[off + i] = src_strides[i];
    }
    for i0 in 0..d[0] {
        for i1 in 0..d[1] {
            for i2 in 0..d[2] {
                let base = i0 * s[0] + i1 * s[1] + i2 * s[2];
                for i3 in 0..d[3] {
                    out.push(x[base + i3 * s[3]]);
                }
            }
        }
    }
    out
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let out_shape = check_permutation(x.shape, axes)?;
    Ok(Tensor::from_parts_unchecked(
        out_shape,
        permute_raw(&x.data, x.shape, axes, out_shape),
    ))
}
