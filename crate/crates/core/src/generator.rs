//! Output distributions: the tied vocabulary projection, two pointer
//! (copy) distributions over the query and caption tokens, and their
//! learned blend.

use alloc::vec::Vec;

use crate::encoders::EncodedText;
use crate::error::{contract, Result};
use crate::graph::{Graph, LossInfo, Var};
use crate::layers::{attention, key_mask, Builder, Linear};
use crate::params::ParamId;
use crate::tensor::Tensor;
use crate::vocab::PAD;

/// Single-head dot-product pointer over a source sequence.
#[derive(Clone, Debug)]
pub struct Pointer {
    pub query: Linear,
    pub key: Linear,
}

impl Pointer {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Pointer {
                query: Linear::new(b, "query", d, d, false)?,
                key: Linear::new(b, "key", d, d, false)?,
            })
        })
    }

    /// Attention of every decoder row over the source positions, scattered
    /// onto the vocabulary slots of the source tokens. Returns the
    /// `[j, |V|]` distribution and the `[1, j, L]` position weights.
    pub fn distribution(
        &self,
        g: &mut Graph<'_>,
        source: &EncodedText,
        decoded: Var,
        vocab_size: usize,
    ) -> Result<(Var, Var)> {
        if source.tokens.len() != g.shape(source.z).dims()[0] {
            return Err(contract("pointer source tokens do not align with encoded rows"));
        }
        let mask = key_mask(g, &source.pad_mask)?;
        let q = self.query.forward(g, decoded)?;
        let k = self.key.forward(g, source.z)?;
        let scatter = g.constant(one_hot(&source.tokens, vocab_size)?);
        // values are the one-hot rows, so the weighted sum is the scatter-add
        let (dist, weights) = attention(g, q, k, scatter, 1, mask)?;
        Ok((dist, weights))
    }
}

/// `[L, |V|]` matrix with a one in each row at that row's token.
pub fn one_hot(tokens: &[usize], vocab_size: usize) -> Result<Tensor> {
    let mut data = alloc::vec![0.0; tokens.len() * vocab_size];
    for (i, &t) in tokens.iter().enumerate() {
        if t >= vocab_size {
            return Err(crate::Error::Vocabulary {
                index: t,
                size: vocab_size,
            });
        }
        data[i * vocab_size + t] = 1.0;
    }
    Tensor::new(&[tokens.len(), vocab_size], data)
}

/// Mean over unpadded rows of `[L, d]`, stacked to `rows` rows.
pub fn expand_summary(g: &mut Graph<'_>, source: &EncodedText, rows: usize) -> Result<Var> {
    let kept = source.pad_mask.iter().filter(|&&p| !p).count();
    if kept == 0 {
        return Err(contract("cannot summarize a fully padded sequence"));
    }
    let w: Vec<f64> = source
        .pad_mask
        .iter()
        .map(|&p| if p { 0.0 } else { 1.0 / kept as f64 })
        .collect();
    let w = g.constant(Tensor::new(&[1, source.pad_mask.len()], w)?);
    let mean = g.matmul(w, source.z)?;
    let stacked = g.repeat(mean, rows)?;
    let d = g.shape(source.z).dims()[1];
    g.reshape(stacked, &[rows, d])
}

/// Row-wise convex combination `Σₖ α[:, k]·Pₖ`.
pub fn blend(g: &mut Graph<'_>, components: &[Var], alpha: Var) -> Result<Var> {
    let dims = g.shape(components[0]).dims().to_vec();
    let (j, v) = (dims[0], dims[1]);
    let mut stacked = Vec::with_capacity(components.len());
    for &c in components {
        stacked.push(g.reshape(c, &[j, 1, v])?);
    }
    let stacked = g.concat(&stacked, 1)?;
    let weights = g.reshape(alpha, &[j, 1, components.len()])?;
    let out = g.matmul(weights, stacked)?;
    g.reshape(out, &[j, v])
}

#[derive(Clone, Copy, Debug)]
pub struct OutputDistribution {
    pub p_out: Var,
    pub alpha: Var,
    pub p_vocab: Var,
    pub ptr_query: Var,
    pub ptr_caption: Option<Var>,
    pub query_weights: Var,
    pub caption_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    /// The text encoder's embedding table, reused as the output projection.
    pub embedding: ParamId,
    pub vocab_size: usize,
    pub query_pointer: Pointer,
    pub caption_pointer: Option<Pointer>,
    pub gate: Linear,
}

impl Generator {
    pub fn new(b: &mut Builder<'_>, embedding: ParamId, vocab_size: usize, d: usize, caption: bool) -> Result<Self> {
        b.scoped("generator", |b| {
            let query_pointer = Pointer::new(b, "ptr_query", d)?;
            let caption_pointer = if caption { Some(Pointer::new(b, "ptr_caption", d)?) } else { None };
            let sources = if caption { 3 } else { 2 };
            let gate = Linear::new(b, "gate", (sources + 1) * d, sources, false)?;
            Ok(Generator {
                embedding,
                vocab_size,
                query_pointer,
                caption_pointer,
                gate,
            })
        })
    }

    /// `softmax(Z_dec · Eᵀ)`.
    pub fn vocab_distribution(&self, g: &mut Graph<'_>, decoded: Var) -> Result<Var> {
        let table = g.param(self.embedding);
        let logits = g.matmul_t(decoded, table)?;
        g.softmax(logits, 1)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        response: Var,
        decoded: Var,
        query: &EncodedText,
        caption: Option<&EncodedText>,
    ) -> Result<OutputDistribution> {
        let j = g.shape(decoded).dims()[0];
        let p_vocab = self.vocab_distribution(g, decoded)?;
        let (ptr_query, query_weights) = self.query_pointer.distribution(g, query, decoded, self.vocab_size)?;
        let mut gate_in = alloc::vec![response, decoded, expand_summary(g, query, j)?];
        let mut comps = alloc::vec![p_vocab, ptr_query];
        let (ptr_caption, caption_weights) = match (&self.caption_pointer, caption) {
            (Some(ptr), Some(cap)) => {
                let (p, w) = ptr.distribution(g, cap, decoded, self.vocab_size)?;
                gate_in.push(expand_summary(g, cap, j)?);
                comps.push(p);
                (Some(p), Some(w))
            }
            (None, _) => (None, None),
            (Some(_), None) => return Err(crate::error::config("generator expects a caption")),
        };
        let gate_in = g.concat(&gate_in, 1)?;
        let logits = self.gate.forward(g, gate_in)?;
        let alpha = g.softmax(logits, 1)?;
        let p_out = blend(g, &comps, alpha)?;
        Ok(OutputDistribution {
            p_out,
            alpha,
            p_vocab,
            ptr_query,
            ptr_caption,
            query_weights,
            caption_weights,
        })
    }
}

/// Mean per-token cross-entropy of `P_out` against `labels`, with label
/// smoothing `epsilon` spread over the other `|V| − 1` entries. PAD labels
/// are skipped.
pub fn generation_loss(g: &mut Graph<'_>, p_out: Var, labels: &[usize], epsilon: f64) -> Result<(Var, LossInfo)> {
    g.cross_entropy(p_out, labels, epsilon, Some(PAD))
}
