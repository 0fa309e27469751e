//! The assembled dialogue model: encoders, reasoning, decoder and
//! generator over one parameter store.

use alloc::vec::Vec;

use crate::decoder::{BlockTrace, Decoder, DecoderSources, Source};
use crate::encoders::{shift_target, EncodedText, FeatureAdapter, TextEncoder};
use crate::error::{config, Result};
use crate::generator::{generation_loss, Generator, OutputDistribution};
use crate::graph::{Graph, LossInfo, Var};
use crate::layers::{key_mask, Builder};
use crate::params::{Initializer, ParamStore};
use crate::reasoning::{Reasoner, ReasoningConfig, ReasoningInputs, RoundOutput, VideoPooling};
use crate::search::{beam_search, greedy_decode, log_probs, Hypothesis, SearchConfig, StepScorer};
use crate::data::{DialogueSample, FeatureSet};
use crate::tensor::Tensor;
use crate::train::Objective;
use crate::vocab::{EOS, SOS};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub d_att: usize,
    pub heads: usize,
    /// Reasoning rounds.
    pub att_rounds: usize,
    /// Decoder blocks.
    pub dec_blocks: usize,
    /// Width of the pretrained visual features.
    pub d_vis: usize,
    /// Width of the pretrained audio features.
    pub d_aud: usize,
    pub video: bool,
    pub audio: bool,
    pub caption: bool,
    pub t2s: bool,
    pub s2t: bool,
    pub pooling: VideoPooling,
}

impl ModelConfig {
    pub fn reasoning(&self) -> ReasoningConfig {
        ReasoningConfig {
            d: self.d,
            d_att: self.d_att,
            heads: self.heads,
            rounds: self.att_rounds,
            t2s: self.video && self.t2s,
            s2t: self.video && self.s2t,
            audio: self.audio,
            caption: self.caption,
            pooling: self.pooling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d % self.heads != 0 {
            return Err(config(alloc::format!("d={} is not divisible by h_att={}", self.d, self.heads)));
        }
        if self.video && !(self.t2s || self.s2t) {
            return Err(config("visual features are enabled but both reasoning directions are off"));
        }
        self.reasoning().validate()
    }
}

/// Inputs for one dialogue turn. Token sequences are vocabulary indices;
/// `video` is `[F, P, d_vis]`, `audio` `[F, d_aud]`.
#[derive(Clone, Copy, Debug)]
pub struct TurnInput<'a> {
    pub history: &'a [usize],
    pub query: &'a [usize],
    pub caption: Option<&'a [usize]>,
    pub video: &'a Tensor,
    pub audio: Option<&'a Tensor>,
}

/// Everything the decoder reads, computed once per turn.
#[derive(Clone, Debug)]
pub struct Context {
    pub history: EncodedText,
    pub query: EncodedText,
    pub caption: Option<EncodedText>,
    pub video: Option<Var>,
    pub audio: Option<Var>,
    pub rounds: Vec<RoundOutput>,
    pub sources: DecoderSources,
}

#[derive(Clone, Debug)]
pub struct DialogueNet {
    pub text: TextEncoder,
    pub video: Option<FeatureAdapter>,
    pub audio: Option<FeatureAdapter>,
    pub reasoner: Reasoner,
    pub decoder: Decoder,
    pub generator: Generator,
}

impl DialogueNet {
    pub fn new(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let text = TextEncoder::new(b, cfg.vocab_size, cfg.d)?;
        let video = if cfg.video {
            Some(FeatureAdapter::new(b, "video", cfg.d_vis, cfg.d)?)
        } else {
            None
        };
        let audio = if cfg.audio {
            Some(FeatureAdapter::new(b, "audio", cfg.d_aud, cfg.d)?)
        } else {
            None
        };
        let reasoner = Reasoner::new(b, &cfg.reasoning())?;
        let decoder = Decoder::new(b, cfg.d, cfg.heads, cfg.dec_blocks)?;
        let generator = Generator::new(b, text.embedding, cfg.vocab_size, cfg.d, cfg.caption)?;
        Ok(DialogueNet {
            text,
            video,
            audio,
            reasoner,
            decoder,
            generator,
        })
    }

    pub fn context(&self, g: &mut Graph<'_>, input: &TurnInput<'_>) -> Result<Context> {
        let history = self.text.encode(g, input.history)?;
        let query = self.text.encode(g, input.query)?;
        let caption = match (self.generator.caption_pointer.is_some(), input.caption) {
            (true, Some(c)) => Some(self.text.encode(g, c)?),
            (true, None) => return Err(config("model expects a caption but none was given")),
            (false, _) => None,
        };
        let video = match &self.video {
            Some(ad) => Some(ad.adapt(g, &*self.reasoner.pool(input.video)?)?),
            None => None,
        };
        let audio = match (&self.audio, input.audio) {
            (Some(ad), Some(a)) => Some(ad.adapt(g, a)?),
            (Some(_), None) => return Err(config("model expects audio features but none were given")),
            (None, _) => None,
        };
        let caption_mask = match &caption {
            Some(c) => key_mask(g, &c.pad_mask)?,
            None => None,
        };
        let inputs = ReasoningInputs {
            // audio-/caption-only models never read the video slot
            video: video.unwrap_or(query.z),
            audio,
            caption: caption.as_ref().map(|c| c.z),
            caption_mask,
        };
        let rounds = self.reasoner.forward(g, query.z, &inputs)?;
        let fused = rounds[rounds.len() - 1].fused;
        let query_mask = key_mask(g, &query.pad_mask)?;
        let sources = DecoderSources {
            history: Source {
                z: history.z,
                mask: key_mask(g, &history.pad_mask)?,
            },
            query: Source {
                z: query.z,
                mask: query_mask,
            },
            // fused rows align with query tokens
            video: Source {
                z: fused,
                mask: query_mask,
            },
        };
        Ok(Context {
            history,
            query,
            caption,
            video,
            audio,
            rounds,
            sources,
        })
    }

    /// Decodes the (shifted) response prefix against a computed context.
    pub fn decode(
        &self,
        g: &mut Graph<'_>,
        ctx: &Context,
        response: &[usize],
    ) -> Result<(OutputDistribution, Vec<BlockTrace>)> {
        let res = self.text.encode(g, response)?;
        let (dec, traces) = self.decoder.forward(g, res.z, &ctx.sources)?;
        let out = self.generator.forward(g, res.z, dec, &ctx.query, ctx.caption.as_ref())?;
        Ok((out, traces))
    }

    /// Teacher-forced generation loss for `target = [SOS, .., EOS]`.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        input: &TurnInput<'_>,
        target: &[usize],
        smoothing: f64,
    ) -> Result<(Var, LossInfo)> {
        let (dec_in, labels) = shift_target(target)?;
        let ctx = self.context(g, input)?;
        let (out, _) = self.decode(g, &ctx, &dec_in)?;
        generation_loss(g, out.p_out, &labels, smoothing)
    }
}

/// Step scorer that keeps the context in the graph and drops the per-step
/// decoding nodes after every call.
pub struct ContextScorer<'n, 'g, 'p> {
    net: &'n DialogueNet,
    graph: &'g mut Graph<'p>,
    ctx: Context,
    mark: usize,
}

impl<'n, 'g, 'p> ContextScorer<'n, 'g, 'p> {
    pub fn new(net: &'n DialogueNet, graph: &'g mut Graph<'p>, input: &TurnInput<'_>) -> Result<Self> {
        let ctx = net.context(graph, input)?;
        let mark = graph.len();
        Ok(ContextScorer { net, graph, ctx, mark })
    }

    /// Full output distribution for the next token.
    pub fn next_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let (out, _) = self.net.decode(self.graph, &self.ctx, prefix)?;
        let p = self.graph.value(out.p_out);
        let last = p.dims()[0] - 1;
        let row = p.row(last).to_vec();
        self.graph.truncate(self.mark);
        Ok(row)
    }
}

impl StepScorer for ContextScorer<'_, '_, '_> {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(log_probs(&self.next_probs(prefix)?))
    }
}

/// A dialogue model with its parameters.
#[derive(Clone, Debug)]
pub struct DialogueModel {
    pub config: ModelConfig,
    pub net: DialogueNet,
    pub params: ParamStore,
}

impl DialogueModel {
    /// Fresh model with Glorot-uniform weights drawn deterministically from
    /// `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let net = DialogueNet::new(&mut Builder::new(&mut params, &mut init), &config)?;
        Ok(DialogueModel { config, net, params })
    }

    /// Rebuilds the structure for `config` around stored parameters, which
    /// must match by name and shape.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = DialogueModel::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(config_mismatch());
        }
        for ((_, a), (_, b)) in fresh.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(config_mismatch());
            }
        }
        Ok(DialogueModel {
            config: fresh.config,
            net: fresh.net,
            params,
        })
    }

    pub fn generate(&self, input: &TurnInput<'_>, search: SearchConfig) -> Result<Hypothesis> {
        let mut g = Graph::new(&self.params);
        let mut scorer = ContextScorer::new(&self.net, &mut g, input)?;
        beam_search(&mut scorer, search)
    }

    pub fn generate_greedy(&self, input: &TurnInput<'_>, max_len: usize) -> Result<Hypothesis> {
        let mut g = Graph::new(&self.params);
        let mut scorer = ContextScorer::new(&self.net, &mut g, input)?;
        greedy_decode(&mut scorer, Self::search_config(1, max_len))
    }

    pub fn search_config(beam_size: usize, max_len: usize) -> SearchConfig {
        SearchConfig {
            beam_size,
            max_len,
            sos: SOS,
            eos: EOS,
        }
    }
}

fn config_mismatch() -> crate::Error {
    config("stored parameters do not match the model configuration")
}

/// A dialogue turn with its features, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueExample {
    pub history: Vec<usize>,
    pub query: Vec<usize>,
    pub caption: Vec<usize>,
    pub target: Vec<usize>,
    pub video: Tensor,
    pub audio: Option<Tensor>,
}

impl DialogueExample {
    pub fn input(&self) -> TurnInput<'_> {
        TurnInput {
            history: &self.history,
            query: &self.query,
            caption: Some(&self.caption),
            video: &self.video,
            audio: self.audio.as_ref(),
        }
    }
}

/// Joins samples with their video features.
pub fn dialogue_examples(samples: &[DialogueSample], features: &FeatureSet) -> Result<Vec<DialogueExample>> {
    samples
        .iter()
        .map(|s| {
            let f = features
                .get(&s.video_id)
                .ok_or_else(|| crate::error::data(alloc::format!("no features for video {}", s.video_id)))?;
            Ok(DialogueExample {
                history: s.history.clone(),
                query: s.query.clone(),
                caption: s.caption.clone(),
                target: s.target.clone(),
                video: f.video.clone(),
                audio: f.audio.clone(),
            })
        })
        .collect()
}

/// Token-weighted generation loss with label smoothing.
pub struct GenerationObjective<'a> {
    pub net: &'a DialogueNet,
    pub smoothing: f64,
}

impl Objective for GenerationObjective<'_> {
    type Example = DialogueExample;

    fn loss(&self, g: &mut Graph<'_>, ex: &DialogueExample) -> Result<(Var, f64)> {
        let (loss, info) = self.net.loss(g, &ex.input(), &ex.target, self.smoothing)?;
        Ok((loss, info.counted as f64))
    }
}
