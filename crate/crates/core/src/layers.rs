//! Small building blocks shared by the reasoning, decoder and generator
//! modules.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config, contract, Result};
use crate::graph::{Graph, Var};
use crate::math;
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{Tensor, LAYER_NORM_EPS};

/// Additive logit used for masked attention positions.
pub const MASK_VALUE: f64 = -1e9;

/// Parameter registration helper that prefixes names with a scope.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub init: &'a mut Initializer,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, init: &'a mut Initializer) -> Self {
        Builder {
            store,
            init,
            prefix: String::new(),
        }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> R) -> R {
        let prefix = if self.prefix.is_empty() {
            String::from(name)
        } else {
            alloc::format!("{}.{}", self.prefix, name)
        };
        let mut child = Builder {
            store: self.store,
            init: self.init,
            prefix,
        };
        f(&mut child)
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            String::from(leaf)
        } else {
            alloc::format!("{}.{}", self.prefix, leaf)
        }
    }

    pub fn glorot(&mut self, leaf: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let t = self.init.glorot(fan_in, fan_out)?;
        Ok(self.store.add(self.name(leaf), t))
    }

    pub fn zeros(&mut self, leaf: &str, dims: &[usize]) -> Result<ParamId> {
        let t = self.init.zeros(dims)?;
        Ok(self.store.add(self.name(leaf), t))
    }

    pub fn ones(&mut self, leaf: &str, dims: &[usize]) -> Result<ParamId> {
        let t = self.init.ones(dims)?;
        Ok(self.store.add(self.name(leaf), t))
    }
}

/// `y = x·W (+ b)` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        b.scoped(name, |b| {
            let weight = b.glorot("weight", in_dim, out_dim)?;
            let bias = if bias { Some(b.zeros("bias", &[out_dim])?) } else { None };
            Ok(Linear {
                weight,
                bias,
                in_dim,
                out_dim,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> {
        core::iter::once(self.weight).chain(self.bias)
    }
}

/// Layer normalization with a trainable gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Norm {
                gain: b.ones("gain", &[d])?,
                bias: b.zeros("bias", &[d])?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// `[.., L, D] -> [.., h, L, D/h]`
pub fn split_heads(g: &mut Graph<'_>, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x);
    let dims = s.dims();
    let r = dims.len();
    let (l, d) = (dims[r - 2], dims[r - 1]);
    if d % heads != 0 {
        return Err(config(alloc::format!("width {d} not divisible by {heads} heads")));
    }
    let mut split: Vec<usize> = dims[..r - 2].to_vec();
    split.extend_from_slice(&[l, heads, d / heads]);
    let y = g.reshape(x, &split)?;
    let axes: Vec<usize> = match r {
        2 => alloc::vec![1, 0, 2],
        3 => alloc::vec![0, 2, 1, 3],
        _ => return Err(contract(alloc::format!("split_heads on rank {r}"))),
    };
    g.permute(y, &axes)
}

/// Inverse of [`split_heads`].
pub fn merge_heads(g: &mut Graph<'_>, x: Var) -> Result<Var> {
    let s = g.shape(x);
    let dims = s.dims();
    let r = dims.len();
    let (h, l, dh) = (dims[r - 3], dims[r - 2], dims[r - 1]);
    let axes: Vec<usize> = match r {
        3 => alloc::vec![1, 0, 2],
        4 => alloc::vec![0, 2, 1, 3],
        _ => return Err(contract(alloc::format!("merge_heads on rank {r}"))),
    };
    let y = g.permute(x, &axes)?;
    let mut merged: Vec<usize> = dims[..r - 3].to_vec();
    merged.extend_from_slice(&[l, h * dh]);
    g.reshape(y, &merged)
}

/// Scaled dot-product attention with `heads` heads.
///
/// `query` is `[.., Lq, Dk]`, `key` `[.., A, Dk]`, `value` `[.., A, Dv]`
/// with matching leading extents. `mask` is an additive logit tensor whose
/// shape is a suffix of the score shape `[.., h, Lq, A]`. Returns the
/// attended values `[.., Lq, Dv]` and the per-head scores.
pub fn attention(
    g: &mut Graph<'_>,
    query: Var,
    key: Var,
    value: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Var)> {
    let dk = g.shape(query).last();
    let q = split_heads(g, query, heads)?;
    let k = split_heads(g, key, heads)?;
    let v = split_heads(g, value, heads)?;
    let logits = g.matmul_t(q, k)?;
    let logits = g.scale(logits, 1.0 / math::sqrt((dk / heads) as f64))?;
    let logits = match mask {
        Some(m) => g.add(logits, m)?,
        None => logits,
    };
    let rank = g.shape(logits).rank();
    let scores = g.softmax(logits, rank - 1)?;
    let out = g.matmul(scores, v)?;
    let out = merge_heads(g, out)?;
    Ok((out, scores))
}

/// Additive key mask (`[L]`) for padded source positions, or `None` when
/// nothing is padded. A fully padded source is a contract error.
pub fn key_mask(g: &mut Graph<'_>, pad: &[bool]) -> Result<Option<Var>> {
    if pad.iter().all(|&p| p) {
        return Err(contract("attention source has no unpadded position"));
    }
    if !pad.iter().any(|&p| p) {
        return Ok(None);
    }
    let data = pad.iter().map(|&p| if p { MASK_VALUE } else { 0.0 }).collect();
    let t = Tensor::new(&[pad.len()], data)?;
    Ok(Some(g.constant(t)))
}

/// `[j, j]` additive mask that hides positions after the query position.
pub fn causal_mask(j: usize) -> Result<Tensor> {
    let mut data = alloc::vec![0.0; j * j];
    for r in 0..j {
        for c in r + 1..j {
            data[r * j + c] = MASK_VALUE;
        }
    }
    Tensor::new(&[j, j], data)
}

/// Decoder-style attention block: projections for query, key, value and
/// output around [`attention`].
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, heads: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(MultiHeadAttention {
                query: Linear::new(b, "query", d, d, true)?,
                key: Linear::new(b, "key", d, d, true)?,
                value: Linear::new(b, "value", d, d, true)?,
                output: Linear::new(b, "output", d, d, true)?,
                heads,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, source: Var, mask: Option<Var>) -> Result<(Var, Var)> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, source)?;
        let v = self.value.forward(g, source)?;
        let (att, scores) = attention(g, q, k, v, self.heads, mask)?;
        Ok((self.output.forward(g, att)?, scores))
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.query
            .params()
            .chain(self.key.params())
            .chain(self.value.params())
            .chain(self.output.params())
    }
}
