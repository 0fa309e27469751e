//! Text encoding with a shared embedding table, and adapters that project
//! frozen pretrained video/audio features down to the model width.

use alloc::vec::Vec;

use crate::error::{config, data, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Builder, Linear, Norm};
use crate::math;
use crate::params::ParamId;
use crate::tensor::Tensor;
use crate::vocab::{EOS, PAD, SOS};

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(config(alloc::format!("positional encoding needs an even width, got {d}")));
    }
    let mut data = alloc::vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / math::powf(10000.0, (2 * i) as f64 / d as f64);
            data[pos * d + 2 * i] = math::sin(angle);
            data[pos * d + 2 * i + 1] = math::cos(angle);
        }
    }
    Tensor::new(&[len, d], data)
}

/// Splits a full target `[SOS, .., EOS]` into decoder input and labels.
pub fn shift_target(target: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if target.len() < 2 || target[0] != SOS || target[target.len() - 1] != EOS {
        return Err(data("target sequence must start with SOS and end with EOS"));
    }
    Ok((target[..target.len() - 1].to_vec(), target[1..].to_vec()))
}

/// Encoded token sequence `[L, d]` with its source tokens and pad flags.
#[derive(Clone, Debug)]
pub struct EncodedText {
    pub z: Var,
    pub tokens: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

/// Embedding lookup plus positions, then layer normalization. One instance
/// (one embedding table) encodes history, query, caption and response.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embedding: ParamId,
    pub norm: Norm,
    pub vocab_size: usize,
    pub d: usize,
}

impl TextEncoder {
    pub fn new(b: &mut Builder<'_>, vocab_size: usize, d: usize) -> Result<Self> {
        if vocab_size < 4 {
            return Err(config("vocabulary needs at least the four reserved entries"));
        }
        if d % 2 != 0 {
            return Err(config(alloc::format!("model width must be even, got {d}")));
        }
        b.scoped("text", |b| {
            Ok(TextEncoder {
                embedding: b.glorot("embedding", vocab_size, d)?,
                norm: Norm::new(b, "norm", d)?,
                vocab_size,
                d,
            })
        })
    }

    pub fn encode(&self, g: &mut Graph<'_>, tokens: &[usize]) -> Result<EncodedText> {
        if tokens.is_empty() {
            return Err(data("cannot encode an empty token sequence"));
        }
        if let Some(&index) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Vocabulary {
                index,
                size: self.vocab_size,
            });
        }
        let table = g.param(self.embedding);
        let emb = g.gather_rows(table, tokens)?;
        let pe = g.constant(positional_encoding(tokens.len(), self.d)?);
        let sum = g.add(emb, pe)?;
        let z = self.norm.forward(g, sum)?;
        Ok(EncodedText {
            z,
            tokens: tokens.to_vec(),
            pad_mask: tokens.iter().map(|&t| t == PAD).collect(),
        })
    }
}

/// `layer_norm(relu(x·W + b))` applied at every feature position.
#[derive(Clone, Debug)]
pub struct FeatureAdapter {
    pub linear: Linear,
    pub norm: Norm,
}

impl FeatureAdapter {
    pub fn new(b: &mut Builder<'_>, name: &str, d_pre: usize, d: usize) -> Result<Self> {
        if d_pre < d {
            return Err(config(alloc::format!(
                "{name}: pretrained width {d_pre} is smaller than model width {d}"
            )));
        }
        b.scoped(name, |b| {
            Ok(FeatureAdapter {
                linear: Linear::new(b, "linear", d_pre, d, true)?,
                norm: Norm::new(b, "norm", d)?,
            })
        })
    }

    /// Adapts `[F, P, d_pre]` video or `[F, d_pre]` audio features. The
    /// features enter as constants, so no gradient reaches them.
    pub fn adapt(&self, g: &mut Graph<'_>, features: &Tensor) -> Result<Var> {
        let dims = features.dims();
        if dims.last() != Some(&self.linear.in_dim) {
            return Err(Error::InvalidShape {
                op: "adapt_features",
                detail: alloc::format!(
                    "features {} do not match adapter input width {}",
                    features.shape(),
                    self.linear.in_dim
                ),
            });
        }
        if dims.iter().any(|&e| e == 0) {
            return Err(Error::EmptyFeatures("adapt_features"));
        }
        let x = g.constant(features.clone());
        let y = self.linear.forward(g, x)?;
        let y = g.relu(y);
        self.norm.forward(g, y)
    }
}
