//! Video QA heads. A trainable probe vector stands in for the response and
//! is decoded against the question (concatenated with a candidate answer
//! when there are candidates) and the fused video. A linear layer turns the
//! decoded probe into a candidate score, a count, or a distribution over
//! answer words.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{FeatureSet, QaRecord, QaTaskKind};
use crate::decoder::{Decoder, DecoderSources, Source};
use crate::encoders::{FeatureAdapter, TextEncoder};
use crate::error::{config, data, Result};
use crate::graph::{Graph, Var};
use crate::layers::{key_mask, Builder, Linear};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::reasoning::{Reasoner, ReasoningConfig, ReasoningInputs, RoundOutput, VideoPooling};
use crate::tensor::Tensor;
use crate::train::Objective;
use crate::vocab::{tokenize, Vocabulary, SOS};

#[derive(Clone, Debug, PartialEq)]
pub struct QaConfig {
    pub task: QaTaskKind,
    pub vocab_size: usize,
    pub d: usize,
    pub d_att: usize,
    pub heads: usize,
    pub att_rounds: usize,
    pub dec_blocks: usize,
    pub d_vis: usize,
    pub t2s: bool,
    pub s2t: bool,
    pub pooling: VideoPooling,
    /// Size of the frame-QA answer vocabulary (unused by other tasks).
    pub answers: usize,
    /// One probe per candidate slot instead of a single shared probe.
    pub probe_per_candidate: bool,
    /// Candidate slots when probes are per candidate.
    pub candidates: usize,
    pub margin: f64,
}

impl QaConfig {
    /// Audio and caption reasoning are removed for QA.
    pub fn reasoning(&self) -> ReasoningConfig {
        ReasoningConfig {
            d: self.d,
            d_att: self.d_att,
            heads: self.heads,
            rounds: self.att_rounds,
            t2s: self.t2s,
            s2t: self.s2t,
            audio: false,
            caption: false,
            pooling: self.pooling,
        }
    }

    fn head_width(&self) -> usize {
        match self.task {
            QaTaskKind::Frame => self.answers,
            _ => 1,
        }
    }

    fn probes(&self) -> usize {
        if self.probe_per_candidate && self.task == QaTaskKind::MultipleChoice {
            self.candidates
        } else {
            1
        }
    }
}

/// Frame-QA answer words; index 0 collects unknown answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerVocab {
    pub words: Vec<String>,
}

impl AnswerVocab {
    pub fn build<'a>(answers: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = answers.into_iter().map(String::from).collect();
        words.sort();
        words.dedup();
        words.retain(|w| w != "<unk>");
        words.insert(0, String::from("<unk>"));
        AnswerVocab { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of `word`, or `(0, true)` when it is unknown.
    pub fn index(&self, word: &str) -> (usize, bool) {
        match self.words.iter().position(|w| w == word) {
            Some(i) => (i, false),
            None => (0, true),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QaTarget {
    Choice { candidates: Vec<Vec<usize>>, label: usize },
    Count(usize),
    Frame(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaExample {
    pub question: Vec<usize>,
    pub target: QaTarget,
    pub video: Tensor,
}

/// Tokenizes QA records. Returns the examples and how many frame answers
/// fell outside `answers` and were mapped to the unknown slot.
pub fn qa_examples(
    records: &[QaRecord],
    features: &FeatureSet,
    vocab: &Vocabulary,
    answers: Option<&AnswerVocab>,
) -> Result<(Vec<QaExample>, usize)> {
    let mut unknown = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let video = features
            .get(&r.video_id)
            .ok_or_else(|| data(alloc::format!("no features for video {}", r.video_id)))?
            .video
            .clone();
        let question = vocab.encode_text(&r.question);
        if question.is_empty() {
            return Err(data(alloc::format!("empty question for video {}", r.video_id)));
        }
        let target = match r.task {
            QaTaskKind::MultipleChoice => {
                let candidates: Vec<Vec<usize>> = r.candidates.iter().map(|c| vocab.encode_text(c)).collect();
                if candidates.iter().any(Vec::is_empty) {
                    return Err(data(alloc::format!("empty candidate for video {}", r.video_id)));
                }
                if r.label >= candidates.len() {
                    return Err(data(alloc::format!("label out of range for video {}", r.video_id)));
                }
                QaTarget::Choice {
                    candidates,
                    label: r.label,
                }
            }
            QaTaskKind::Count => QaTarget::Count(r.label),
            QaTaskKind::Frame => {
                let av = answers.ok_or_else(|| config("frame QA needs an answer vocabulary"))?;
                let word = tokenize(&r.answer).into_iter().next().unwrap_or_default();
                let (i, missing) = av.index(&word);
                unknown += missing as usize;
                QaTarget::Frame(i)
            }
        };
        out.push(QaExample { question, target, video });
    }
    Ok((out, unknown))
}

#[derive(Clone, Debug)]
pub struct QaNet {
    pub config: QaConfig,
    pub text: TextEncoder,
    pub video: FeatureAdapter,
    pub reasoner: Reasoner,
    pub decoder: Decoder,
    pub probes: Vec<ParamId>,
    pub head: Linear,
}

/// Decoded probe `[1, d]` and the reasoning rounds behind it.
#[derive(Clone, Debug)]
pub struct ProbeState {
    pub z_dec: Var,
    pub rounds: Vec<RoundOutput>,
}

impl QaNet {
    pub fn new(b: &mut Builder<'_>, cfg: &QaConfig) -> Result<Self> {
        if cfg.task == QaTaskKind::Frame && cfg.answers == 0 {
            return Err(config("frame QA needs at least one answer"));
        }
        if cfg.probes() == 0 {
            return Err(config("per-candidate probes need the candidate count"));
        }
        let text = TextEncoder::new(b, cfg.vocab_size, cfg.d)?;
        let video = FeatureAdapter::new(b, "video", cfg.d_vis, cfg.d)?;
        let reasoner = Reasoner::new(b, &cfg.reasoning())?;
        let decoder = Decoder::new(b, cfg.d, cfg.heads, cfg.dec_blocks)?;
        let probes = b.scoped("qa", |b| {
            (0..cfg.probes())
                .map(|i| b.glorot(&alloc::format!("probe{i}"), 1, cfg.d))
                .collect::<Result<Vec<_>>>()
        })?;
        let head = b.scoped("qa", |b| Linear::new(b, "head", cfg.d, cfg.head_width(), false))?;
        Ok(QaNet {
            config: cfg.clone(),
            text,
            video,
            reasoner,
            decoder,
            probes,
            head,
        })
    }

    /// Decodes the probe for `slot` against `query` and the video.
    pub fn probe(&self, g: &mut Graph<'_>, query: &[usize], video: &Tensor, slot: usize) -> Result<ProbeState> {
        let history = self.text.encode(g, &[SOS])?;
        let q = self.text.encode(g, query)?;
        let v = self.video.adapt(g, &*self.reasoner.pool(video)?)?;
        let inputs = ReasoningInputs {
            video: v,
            audio: None,
            caption: None,
            caption_mask: None,
        };
        let rounds = self.reasoner.forward(g, q.z, &inputs)?;
        let fused = rounds[rounds.len() - 1].fused;
        let qmask = key_mask(g, &q.pad_mask)?;
        let sources = DecoderSources {
            history: Source { z: history.z, mask: None },
            query: Source { z: q.z, mask: qmask },
            video: Source { z: fused, mask: qmask },
        };
        let probe = g.param(self.probes[slot.min(self.probes.len() - 1)]);
        let (z_dec, _) = self.decoder.forward(g, probe, &sources)?;
        Ok(ProbeState { z_dec, rounds })
    }

    /// Score `s = Z_dec · W_out` of `question ⊕ candidate`.
    pub fn score(&self, g: &mut Graph<'_>, question: &[usize], candidate: &[usize], video: &Tensor, slot: usize) -> Result<Var> {
        if candidate.is_empty() {
            return Err(data("candidate answer is empty"));
        }
        let mut query = question.to_vec();
        query.extend_from_slice(candidate);
        let state = self.probe(g, &query, video, slot)?;
        self.head.forward(g, state.z_dec)
    }

    /// Scores of every candidate as a `[K]` vector.
    pub fn candidate_scores(&self, g: &mut Graph<'_>, question: &[usize], candidates: &[Vec<usize>], video: &Tensor) -> Result<Var> {
        let mut scores = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            let s = self.score(g, question, c, video, i)?;
            scores.push(g.reshape(s, &[1])?);
        }
        g.concat(&scores, 0)
    }

    /// Regressed count `[1, 1]`.
    pub fn count(&self, g: &mut Graph<'_>, question: &[usize], video: &Tensor) -> Result<Var> {
        let state = self.probe(g, question, video, 0)?;
        self.head.forward(g, state.z_dec)
    }

    /// `softmax(Z_dec · W_out)` over the answer vocabulary, `[1, |answers|]`.
    pub fn frame_distribution(&self, g: &mut Graph<'_>, question: &[usize], video: &Tensor) -> Result<Var> {
        let state = self.probe(g, question, video, 0)?;
        let logits = self.head.forward(g, state.z_dec)?;
        g.softmax(logits, 1)
    }

    /// Task loss for one example: summed hinge, squared error, or
    /// cross-entropy on the answer word.
    pub fn loss(&self, g: &mut Graph<'_>, ex: &QaExample) -> Result<Var> {
        match (&ex.target, self.config.task) {
            (QaTarget::Choice { candidates, label }, QaTaskKind::MultipleChoice) => {
                let s = self.candidate_scores(g, &ex.question, candidates, &ex.video)?;
                g.hinge(s, *label, self.config.margin)
            }
            (QaTarget::Count(y), QaTaskKind::Count) => {
                let s = self.count(g, &ex.question, &ex.video)?;
                g.squared_error(s, *y as f64)
            }
            (QaTarget::Frame(a), QaTaskKind::Frame) => {
                let p = self.frame_distribution(g, &ex.question, &ex.video)?;
                Ok(g.cross_entropy(p, &[*a], 0.0, None)?.0)
            }
            _ => Err(data("QA example does not match the head's task")),
        }
    }
}

/// A QA head with its parameters.
#[derive(Clone, Debug)]
pub struct QaModel {
    pub net: QaNet,
    pub params: ParamStore,
}

impl QaModel {
    pub fn new(config: QaConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let net = QaNet::new(&mut Builder::new(&mut params, &mut init), &config)?;
        Ok(QaModel { net, params })
    }

    /// Rebuilds the head for `config` around stored parameters, which must
    /// match by name and shape.
    pub fn with_params(config: QaConfig, params: ParamStore) -> Result<Self> {
        let fresh = QaModel::new(config, 0)?;
        let same = fresh.params.len() == params.len()
            && fresh
                .params
                .iter()
                .zip(params.iter())
                .all(|((_, a), (_, b))| a.name == b.name && a.value.shape() == b.value.shape());
        if !same {
            return Err(config_error());
        }
        Ok(QaModel { net: fresh.net, params })
    }

    pub fn predict(&self, ex: &QaExample) -> Result<QaPrediction> {
        let mut g = Graph::new(&self.params);
        Ok(match &ex.target {
            QaTarget::Choice { candidates, .. } => {
                let s = self.net.candidate_scores(&mut g, &ex.question, candidates, &ex.video)?;
                QaPrediction::Scores(g.value(s).data().to_vec())
            }
            QaTarget::Count(_) => {
                let s = self.net.count(&mut g, &ex.question, &ex.video)?;
                QaPrediction::Count(g.value(s).item()?)
            }
            QaTarget::Frame(_) => {
                let p = self.net.frame_distribution(&mut g, &ex.question, &ex.video)?;
                QaPrediction::Distribution(g.value(p).data().to_vec())
            }
        })
    }
}

impl Objective for QaNet {
    type Example = QaExample;

    fn loss(&self, g: &mut Graph<'_>, ex: &QaExample) -> Result<(Var, f64)> {
        Ok((QaNet::loss(self, g, ex)?, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QaPrediction {
    Scores(Vec<f64>),
    Count(f64),
    Distribution(Vec<f64>),
}

fn config_error() -> crate::Error {
    config("stored parameters do not match the QA configuration")
}

/// `Σₙ max(0, m − (s_pos − s_n))`.
pub fn hinge_loss(s_pos: f64, s_negs: &[f64], margin: f64) -> f64 {
    s_negs.iter().map(|&n| (margin - (s_pos - n)).max(0.0)).sum()
}

/// `(s − y)²`.
pub fn count_loss(s: f64, y: f64) -> f64 {
    (s - y) * (s - y)
}

/// Count rounded to the nearest integer and clipped to `[1, 10]`.
pub fn rounded_count(s: f64) -> usize {
    crate::math::round(s).clamp(1.0, 10.0) as usize
}

/// Index of the strict maximum, `None` on a tie for the top score.
pub fn strict_argmax(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let ties = values.iter().filter(|&&v| v == values[best]).count();
    if values.is_empty() || ties > 1 {
        None
    } else {
        Some(best)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QaMetrics {
    pub examples: usize,
    /// Multiple-choice or frame accuracy.
    pub accuracy: Option<f64>,
    /// Mean squared count error.
    pub count_l2: Option<f64>,
    /// Accuracy of rounded, clipped counts.
    pub count_accuracy: Option<f64>,
    /// Examples whose top score was tied (counted incorrect).
    pub ties: usize,
}

/// Scores predictions against the examples' targets.
pub fn evaluate_predictions(examples: &[QaExample], predictions: &[QaPrediction]) -> Result<QaMetrics> {
    if examples.len() != predictions.len() {
        return Err(data("prediction count does not match the examples"));
    }
    if examples.is_empty() {
        return Err(data("QA evaluation set is empty"));
    }
    let mut m = QaMetrics {
        examples: examples.len(),
        ..QaMetrics::default()
    };
    let (mut correct, mut sq, mut round_ok, mut counted) = (0usize, 0.0, 0usize, 0usize);
    for (ex, pred) in examples.iter().zip(predictions) {
        match (&ex.target, pred) {
            (QaTarget::Choice { label, .. }, QaPrediction::Scores(s)) | (QaTarget::Frame(label), QaPrediction::Distribution(s)) => {
                match strict_argmax(s) {
                    Some(i) if i == *label => correct += 1,
                    Some(_) => {}
                    None => m.ties += 1,
                }
            }
            (QaTarget::Count(y), QaPrediction::Count(s)) => {
                sq += count_loss(*s, *y as f64);
                round_ok += (rounded_count(*s) == *y) as usize;
                counted += 1;
            }
            _ => return Err(data("prediction kind does not match the example")),
        }
    }
    let n = examples.len() as f64;
    if counted > 0 {
        m.count_l2 = Some(sq / counted as f64);
        m.count_accuracy = Some(round_ok as f64 / counted as f64);
    } else {
        m.accuracy = Some(correct as f64 / n);
    }
    Ok(m)
}

pub fn evaluate_qa(model: &QaModel, examples: &[QaExample]) -> Result<QaMetrics> {
    let preds = examples.iter().map(|e| model.predict(e)).collect::<Result<Vec<_>>>()?;
    evaluate_predictions(examples, &preds)
}
