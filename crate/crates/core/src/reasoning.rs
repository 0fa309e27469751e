//! Query-guided reasoning over spatio-temporal video features.
//!
//! Two directed paths read the `[F, P, d]` video tensor. Temporal→spatial
//! attends over the `F` clips separately at every spatial position and then
//! over the `P` positions; spatial→temporal does the reverse. Audio and
//! caption are each read with a single attention stage. A learned,
//! per-query-token softmax over the attended components fuses them into
//! `Z_vid`, and the fused tensor becomes the query of the next round.

use alloc::borrow::Cow;
use alloc::vec::Vec;

use crate::error::{config, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{attention, Builder, Linear, Norm};
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Average pooling applied to the video tensor before any reasoning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VideoPooling {
    /// Keep the full `[F, P, d]` tensor.
    None,
    /// Mean over spatial positions: `[F, 1, d]`.
    TemporalOnly,
    /// Mean over clips: `[1, P, d]`.
    SpatialOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    TemporalToSpatial,
    SpatialToTemporal,
    Audio,
    Caption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    TemporalToSpatial,
    SpatialToTemporal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ReasoningConfig {
    pub d: usize,
    pub d_att: usize,
    pub heads: usize,
    pub rounds: usize,
    pub t2s: bool,
    pub s2t: bool,
    pub audio: bool,
    pub caption: bool,
    pub pooling: VideoPooling,
}

impl ReasoningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(config("at least one reasoning round is required"));
        }
        if self.heads == 0 || self.d_att % self.heads != 0 || self.d % self.heads != 0 {
            return Err(config(alloc::format!(
                "d={} and d_att={} must both be divisible by h_att={}",
                self.d,
                self.d_att,
                self.heads
            )));
        }
        if self.components().is_empty() {
            return Err(config("every reasoning component is disabled"));
        }
        Ok(())
    }

    /// Enabled components in fusion column order.
    pub fn components(&self) -> Vec<Component> {
        let mut out = Vec::new();
        if self.t2s {
            out.push(Component::TemporalToSpatial);
        }
        if self.s2t {
            out.push(Component::SpatialToTemporal);
        }
        if self.audio {
            out.push(Component::Audio);
        }
        if self.caption {
            out.push(Component::Caption);
        }
        out
    }
}

/// One attention stage: key/query projections (`d → d_att`, no bias), a
/// `d → d` linear + ReLU on the attended values, and a post-norm skip
/// connection to the query side.
#[derive(Clone, Debug)]
pub struct AttentionStage {
    pub key: Linear,
    pub query: Linear,
    pub feed_forward: Linear,
    pub norm: Norm,
    pub heads: usize,
}

/// Outputs of one stage along with its softmax scores.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput {
    pub z: Var,
    pub scores: Var,
}

impl AttentionStage {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &ReasoningConfig) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(AttentionStage {
                key: Linear::new(b, "key", cfg.d, cfg.d_att, false)?,
                query: Linear::new(b, "query", cfg.d, cfg.d_att, false)?,
                feed_forward: Linear::new(b, "ff", cfg.d, cfg.d, true)?,
                norm: Norm::new(b, "norm", cfg.d)?,
                heads: cfg.heads,
            })
        })
    }

    fn finish(&self, g: &mut Graph<'_>, attended: Var, skip: Var) -> Result<Var> {
        let ff = self.feed_forward.forward(g, attended)?;
        let ff = g.relu(ff);
        let sum = g.add(ff, skip)?;
        self.norm.forward(g, sum)
    }

    /// Attends over axis 1 of `features` `[G, A, d]` separately for every
    /// group, with the query stacked to all `G` groups. Output `[G, L, d]`,
    /// scores `[G, h, L, A]`.
    pub fn grouped(&self, g: &mut Graph<'_>, features: Var, query: Var) -> Result<StageOutput> {
        let groups = g.shape(features).dims()[0];
        let keys = self.key.forward(g, features)?;
        let q = self.query.forward(g, query)?;
        let q = g.repeat(q, groups)?;
        let (attended, scores) = attention(g, q, keys, features, self.heads, None)?;
        let skip = g.repeat(query, groups)?;
        Ok(StageOutput {
            z: self.finish(g, attended, skip)?,
            scores,
        })
    }

    /// Every query token `l` attends over its own row `features[l]`
    /// (`[L, G, d]`). Output `[L, d]`, scores `[L, h, 1, G]`.
    pub fn per_token(&self, g: &mut Graph<'_>, features: Var, query: Var) -> Result<StageOutput> {
        let dims = g.shape(features).dims().to_vec();
        let (l, d) = (dims[0], dims[2]);
        let keys = self.key.forward(g, features)?;
        let q = self.query.forward(g, query)?;
        let q = g.reshape(q, &[l, 1, self.query.out_dim])?;
        let (attended, scores) = attention(g, q, keys, features, self.heads, None)?;
        let attended = g.reshape(attended, &[l, d])?;
        Ok(StageOutput {
            z: self.finish(g, attended, query)?,
            scores,
        })
    }

    /// Plain attention of the query `[L, d]` over `features` `[A, d]`.
    /// Output `[L, d]`, scores `[h, L, A]`.
    pub fn flat(&self, g: &mut Graph<'_>, features: Var, query: Var, mask: Option<Var>) -> Result<StageOutput> {
        let keys = self.key.forward(g, features)?;
        let q = self.query.forward(g, query)?;
        let (attended, scores) = attention(g, q, keys, features, self.heads, mask)?;
        Ok(StageOutput {
            z: self.finish(g, attended, query)?,
            scores,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.key
            .params()
            .chain(self.query.params())
            .chain(self.feed_forward.params())
            .chain([self.norm.gain, self.norm.bias])
    }
}

/// Two chained stages reading the video in one direction. Each direction
/// owns its weights.
#[derive(Clone, Debug)]
pub struct DirectedReasoning {
    pub direction: Direction,
    pub first: AttentionStage,
    pub second: AttentionStage,
}

#[derive(Clone, Copy, Debug)]
pub struct DirectedOutput {
    /// Output of the first stage, `[G, L, d]` (`G = P` for t2s, `F` for s2t).
    pub intermediate: Var,
    pub first_scores: Var,
    pub second_scores: Var,
    pub z: Var,
}

impl DirectedReasoning {
    pub fn new(b: &mut Builder<'_>, direction: Direction, cfg: &ReasoningConfig) -> Result<Self> {
        let name = match direction {
            Direction::TemporalToSpatial => "t2s",
            Direction::SpatialToTemporal => "s2t",
        };
        b.scoped(name, |b| {
            Ok(DirectedReasoning {
                direction,
                first: AttentionStage::new(b, "stage1", cfg)?,
                second: AttentionStage::new(b, "stage2", cfg)?,
            })
        })
    }

    /// `video` is `[F, P, d]`, `query` `[L, d]`; output `[L, d]`.
    pub fn forward(&self, g: &mut Graph<'_>, video: Var, query: Var) -> Result<DirectedOutput> {
        let grouped = match self.direction {
            // group by spatial position, attend over clips
            Direction::TemporalToSpatial => g.permute(video, &[1, 0, 2])?,
            // group by clip, attend over spatial positions
            Direction::SpatialToTemporal => video,
        };
        let first = self.first.grouped(g, grouped, query)?;
        let per_token = g.permute(first.z, &[1, 0, 2])?;
        let second = self.second.per_token(g, per_token, query)?;
        Ok(DirectedOutput {
            intermediate: first.z,
            first_scores: first.scores,
            second_scores: second.scores,
            z: second.z,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.first.params().chain(self.second.params())
    }
}

/// Importance-score fusion of the attended components.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub scorer: Linear,
    pub components: usize,
}

impl Fusion {
    pub fn new(b: &mut Builder<'_>, d: usize, components: usize) -> Result<Self> {
        Ok(Fusion {
            scorer: Linear::new(b, "fusion", (components + 1) * d, components, false)?,
            components,
        })
    }

    /// `S = softmax([query; c₁; …; c_k]·W)`, `Z[t] = Σₖ S[t,k]·cₖ[t]`.
    /// Returns `(Z_vid [L, d], S_vid [L, k])`.
    pub fn forward(&self, g: &mut Graph<'_>, query: Var, components: &[Var]) -> Result<(Var, Var)> {
        if components.len() != self.components {
            return Err(Error::Contract(alloc::format!(
                "fusion built for {} components, got {}",
                self.components,
                components.len()
            )));
        }
        let mut parts = Vec::with_capacity(components.len() + 1);
        parts.push(query);
        parts.extend_from_slice(components);
        let joined = g.concat(&parts, 1)?;
        let logits = self.scorer.forward(g, joined)?;
        let scores = g.softmax(logits, 1)?;
        let dims = g.shape(query).dims().to_vec();
        let (l, d) = (dims[0], dims[1]);
        let mut stacked = Vec::with_capacity(components.len());
        for &c in components {
            stacked.push(g.reshape(c, &[l, 1, d])?);
        }
        let stacked = g.concat(&stacked, 1)?;
        let weights = g.reshape(scores, &[l, 1, self.components])?;
        let fused = g.matmul(weights, stacked)?;
        let fused = g.reshape(fused, &[l, d])?;
        Ok((fused, scores))
    }
}

/// Parameters of one reasoning round.
#[derive(Clone, Debug)]
pub struct ReasoningRound {
    pub t2s: Option<DirectedReasoning>,
    pub s2t: Option<DirectedReasoning>,
    pub audio: Option<AttentionStage>,
    pub caption: Option<AttentionStage>,
    pub fusion: Fusion,
}

/// Inputs shared by every round.
#[derive(Clone, Copy, Debug)]
pub struct ReasoningInputs {
    /// Adapted video `[F, P, d]`, pooled beforehand if configured.
    pub video: Var,
    pub audio: Option<Var>,
    pub caption: Option<Var>,
    pub caption_mask: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub t2s: Option<DirectedOutput>,
    pub s2t: Option<DirectedOutput>,
    pub audio: Option<StageOutput>,
    pub caption: Option<StageOutput>,
    pub components: Vec<Var>,
    pub fused: Var,
    pub fusion_scores: Var,
}

impl ReasoningRound {
    pub fn new(b: &mut Builder<'_>, cfg: &ReasoningConfig) -> Result<Self> {
        let t2s = if cfg.t2s {
            Some(DirectedReasoning::new(b, Direction::TemporalToSpatial, cfg)?)
        } else {
            None
        };
        let s2t = if cfg.s2t {
            Some(DirectedReasoning::new(b, Direction::SpatialToTemporal, cfg)?)
        } else {
            None
        };
        let audio = if cfg.audio { Some(AttentionStage::new(b, "q2a", cfg)?) } else { None };
        let caption = if cfg.caption { Some(AttentionStage::new(b, "q2c", cfg)?) } else { None };
        let fusion = Fusion::new(b, cfg.d, cfg.components().len())?;
        Ok(ReasoningRound {
            t2s,
            s2t,
            audio,
            caption,
            fusion,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, query: Var, inputs: &ReasoningInputs) -> Result<RoundOutput> {
        let mut components = Vec::new();
        let t2s = match &self.t2s {
            Some(path) => {
                let out = path.forward(g, inputs.video, query)?;
                components.push(out.z);
                Some(out)
            }
            None => None,
        };
        let s2t = match &self.s2t {
            Some(path) => {
                let out = path.forward(g, inputs.video, query)?;
                components.push(out.z);
                Some(out)
            }
            None => None,
        };
        let audio = match &self.audio {
            Some(stage) => {
                let aud = inputs
                    .audio
                    .ok_or_else(|| config("model expects audio features but none were given"))?;
                let out = stage.flat(g, aud, query, None)?;
                components.push(out.z);
                Some(out)
            }
            None => None,
        };
        let caption = match &self.caption {
            Some(stage) => {
                let cap = inputs
                    .caption
                    .ok_or_else(|| config("model expects a caption but none was given"))?;
                let out = stage.flat(g, cap, query, inputs.caption_mask)?;
                components.push(out.z);
                Some(out)
            }
            None => None,
        };
        let (fused, fusion_scores) = self.fusion.forward(g, query, &components)?;
        Ok(RoundOutput {
            t2s,
            s2t,
            audio,
            caption,
            components,
            fused,
            fusion_scores,
        })
    }
}

/// The stack of reasoning rounds; rounds share no parameters.
#[derive(Clone, Debug)]
pub struct Reasoner {
    pub config: ReasoningConfig,
    pub rounds: Vec<ReasoningRound>,
}

impl Reasoner {
    pub fn new(b: &mut Builder<'_>, cfg: &ReasoningConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rounds = Vec::with_capacity(cfg.rounds);
        for r in 0..cfg.rounds {
            let round = b.scoped(&alloc::format!("reason{r}"), |b| ReasoningRound::new(b, cfg))?;
            rounds.push(round);
        }
        Ok(Reasoner {
            config: cfg.clone(),
            rounds,
        })
    }

    /// Applies the configured pooling to pretrained `[F, P, d_pre]` video
    /// features before they are adapted.
    pub fn pool<'v>(&self, video: &'v Tensor) -> Result<Cow<'v, Tensor>> {
        let dims = video.dims();
        if dims.len() != 3 {
            return Err(Error::InvalidShape {
                op: "reasoning",
                detail: alloc::format!("video must be [F, P, d], got {:?}", dims),
            });
        }
        let (f, p, d) = (dims[0], dims[1], dims[2]);
        if f == 0 || p == 0 {
            return Err(Error::EmptyFeatures("reasoning"));
        }
        let src = video.data();
        let (out, shape) = match self.config.pooling {
            VideoPooling::None => return Ok(Cow::Borrowed(video)),
            VideoPooling::TemporalOnly => {
                let mut out = alloc::vec![0.0; f * d];
                for i in 0..f {
                    for j in 0..p {
                        for k in 0..d {
                            out[i * d + k] += src[(i * p + j) * d + k] / p as f64;
                        }
                    }
                }
                (out, [f, 1, d])
            }
            VideoPooling::SpatialOnly => {
                let mut out = alloc::vec![0.0; p * d];
                for i in 0..f {
                    for j in 0..p {
                        for k in 0..d {
                            out[j * d + k] += src[(i * p + j) * d + k] / f as f64;
                        }
                    }
                }
                (out, [1, p, d])
            }
        };
        Ok(Cow::Owned(Tensor::new(&shape, out)?))
    }

    /// Runs every round; round `r > 0` uses the previous fused output as its
    /// query. Returns the per-round outputs (the last holds the final
    /// `Z_vid`).
    pub fn forward(&self, g: &mut Graph<'_>, query: Var, inputs: &ReasoningInputs) -> Result<Vec<RoundOutput>> {
        let mut outs: Vec<RoundOutput> = Vec::with_capacity(self.rounds.len());
        let mut q = query;
        for round in &self.rounds {
            let out = round.forward(g, q, inputs)?;
            q = out.fused;
            outs.push(out);
        }
        Ok(outs)
    }
}
