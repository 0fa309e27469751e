//! Auto-regressive response decoder. Each block runs causal self-attention,
//! attention over the dialogue history, over the current query and over the
//! fused video representation, then a position-wise feed-forward layer, with
//! a residual connection and layer normalization around every stage.

use alloc::vec::Vec;

use crate::error::{config, Result};
use crate::graph::{Graph, Var};
use crate::layers::{causal_mask, Builder, Linear, MultiHeadAttention, Norm};
use crate::params::ParamId;

/// An attention source and its optional additive key mask.
#[derive(Clone, Copy, Debug)]
pub struct Source {
    pub z: Var,
    pub mask: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderSources {
    pub history: Source,
    pub query: Source,
    pub video: Source,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    pub history_attn: MultiHeadAttention,
    pub query_attn: MultiHeadAttention,
    pub video_attn: MultiHeadAttention,
    pub norms: [Norm; 5],
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Attention scores recorded by one block (per head).
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub self_scores: Var,
    pub history_scores: Var,
    pub query_scores: Var,
    pub video_scores: Var,
}

impl DecoderBlock {
    pub fn new(b: &mut Builder<'_>, d: usize, heads: usize, ff_width: usize) -> Result<Self> {
        Ok(DecoderBlock {
            self_attn: MultiHeadAttention::new(b, "self", d, heads)?,
            history_attn: MultiHeadAttention::new(b, "history", d, heads)?,
            query_attn: MultiHeadAttention::new(b, "query", d, heads)?,
            video_attn: MultiHeadAttention::new(b, "video", d, heads)?,
            norms: [
                Norm::new(b, "norm_self", d)?,
                Norm::new(b, "norm_history", d)?,
                Norm::new(b, "norm_query", d)?,
                Norm::new(b, "norm_video", d)?,
                Norm::new(b, "norm_ff", d)?,
            ],
            ff_in: Linear::new(b, "ff_in", d, ff_width, true)?,
            ff_out: Linear::new(b, "ff_out", ff_width, d, true)?,
        })
    }

    /// `layer_norm(x + self_attention(x))` with a causal mask.
    pub fn masked_self_attention(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Var)> {
        let j = g.shape(x).dims()[0];
        let mask = g.constant(causal_mask(j)?);
        let (att, scores) = self.self_attn.forward(g, x, x, Some(mask))?;
        let sum = g.add(x, att)?;
        Ok((self.norms[0].forward(g, sum)?, scores))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, sources: &DecoderSources) -> Result<(Var, BlockTrace)> {
        let (x, self_scores) = self.masked_self_attention(g, x)?;
        let (x, history_scores) = cross_attention(g, &self.history_attn, &self.norms[1], x, sources.history)?;
        let (x, query_scores) = cross_attention(g, &self.query_attn, &self.norms[2], x, sources.query)?;
        let (x, video_scores) = cross_attention(g, &self.video_attn, &self.norms[3], x, sources.video)?;
        let h = self.ff_in.forward(g, x)?;
        let h = g.relu(h);
        let h = self.ff_out.forward(g, h)?;
        let sum = g.add(x, h)?;
        let out = self.norms[4].forward(g, sum)?;
        Ok((
            out,
            BlockTrace {
                self_scores,
                history_scores,
                query_scores,
                video_scores,
            },
        ))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self
            .self_attn
            .params()
            .chain(self.history_attn.params())
            .chain(self.query_attn.params())
            .chain(self.video_attn.params())
            .chain(self.ff_in.params())
            .chain(self.ff_out.params())
            .collect();
        for n in &self.norms {
            out.push(n.gain);
            out.push(n.bias);
        }
        out
    }
}

/// `layer_norm(x + attention(x, source))`. The source mask must leave at
/// least one position visible; [`crate::layers::key_mask`] enforces that when
/// masks are built.
pub fn cross_attention(
    g: &mut Graph<'_>,
    attn: &MultiHeadAttention,
    norm: &Norm,
    x: Var,
    source: Source,
) -> Result<(Var, Var)> {
    let (att, scores) = attn.forward(g, x, source.z, source.mask)?;
    let sum = g.add(x, att)?;
    Ok((norm.forward(g, sum)?, scores))
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub blocks: Vec<DecoderBlock>,
}

impl Decoder {
    pub fn new(b: &mut Builder<'_>, d: usize, heads: usize, blocks: usize) -> Result<Self> {
        if blocks < 1 {
            return Err(config("decoder needs at least one block"));
        }
        if d % heads != 0 {
            return Err(config(alloc::format!("d={d} not divisible by {heads} heads")));
        }
        let mut out = Vec::with_capacity(blocks);
        for i in 0..blocks {
            out.push(b.scoped(&alloc::format!("dec{i}"), |b| DecoderBlock::new(b, d, heads, 4 * d))?);
        }
        Ok(Decoder { blocks: out })
    }

    /// Decodes `[j, d]` response states against the three sources.
    pub fn forward(&self, g: &mut Graph<'_>, response: Var, sources: &DecoderSources) -> Result<(Var, Vec<BlockTrace>)> {
        let mut x = response;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, trace) = block.forward(g, x, sources)?;
            x = y;
            traces.push(trace);
        }
        Ok((x, traces))
    }
}
