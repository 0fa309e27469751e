//! Dialogue and QA records, tokenized training samples and corpus counts.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::tensor::Tensor;
use crate::vocab::{tokenize, Vocabulary, EOS, SOS};

/// One question/answer exchange. `references` holds extra reference
/// answers for evaluation; the answer itself is always the first reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl Turn {
    /// Answer followed by the extra references, at most six in total.
    pub fn all_references(&self) -> Vec<&str> {
        let mut out = alloc::vec![self.answer.as_str()];
        out.extend(self.references.iter().map(String::as_str));
        out.truncate(6);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub video_id: String,
    pub caption: String,
    pub turns: Vec<Turn>,
}

impl DialogueRecord {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(data(alloc::format!("dialogue {} has no turns", self.video_id)));
        }
        if let Some(i) = self.turns.iter().position(|t| tokenize(&t.question).is_empty()) {
            return Err(data(alloc::format!("dialogue {} turn {i} has an empty question", self.video_id)));
        }
        Ok(())
    }
}

/// Pretrained features for one video: `[F, P, d_vis]` and optional
/// `[F, d_aud]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub video: Tensor,
    pub audio: Option<Tensor>,
}

pub type FeatureSet = BTreeMap<String, VideoFeatures>;

/// A tokenized, index-encoded dialogue turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueSample {
    pub video_id: String,
    /// `SOS` followed by each previous turn's question and answer and `EOS`.
    pub history: Vec<usize>,
    pub query: Vec<usize>,
    pub caption: Vec<usize>,
    /// `[SOS, answer.., EOS]`.
    pub target: Vec<usize>,
    pub references: Vec<Vec<String>>,
}

/// Encodes the history as `SOS` followed by every earlier turn's question
/// and answer tokens, each turn closed by `EOS`.
pub fn encode_history(vocab: &Vocabulary, earlier: &[Turn]) -> Vec<usize> {
    let mut out = alloc::vec![SOS];
    for t in earlier {
        out.extend(vocab.encode_text(&t.question));
        out.extend(vocab.encode_text(&t.answer));
        out.push(EOS);
    }
    out
}

pub fn encode_target(vocab: &Vocabulary, answer: &str) -> Vec<usize> {
    let mut out = alloc::vec![SOS];
    out.extend(vocab.encode_text(answer));
    out.push(EOS);
    out
}

/// One sample per turn, with all earlier turns of the dialogue as history.
pub fn dialogue_samples(records: &[DialogueRecord], vocab: &Vocabulary) -> Result<Vec<DialogueSample>> {
    let mut out = Vec::new();
    for r in records {
        r.validate()?;
        let caption = vocab.encode_text(&r.caption);
        let caption = if caption.is_empty() { alloc::vec![SOS] } else { caption };
        for (i, t) in r.turns.iter().enumerate() {
            out.push(DialogueSample {
                video_id: r.video_id.clone(),
                history: encode_history(vocab, &r.turns[..i]),
                query: vocab.encode_text(&t.question),
                caption: caption.clone(),
                target: encode_target(vocab, &t.answer),
                references: t.all_references().into_iter().map(tokenize).collect(),
            });
        }
    }
    Ok(out)
}

/// Every token sequence in a set of dialogues, for vocabulary building.
pub fn dialogue_corpus(records: &[DialogueRecord]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for r in records {
        out.push(tokenize(&r.caption));
        for t in &r.turns {
            out.push(tokenize(&t.question));
            out.push(tokenize(&t.answer));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub turns: usize,
    pub words: usize,
}

impl CorpusStats {
    /// Words count caption, question and answer tokens.
    pub fn of(records: &[DialogueRecord]) -> Self {
        let mut s = CorpusStats {
            dialogs: records.len(),
            ..CorpusStats::default()
        };
        for r in records {
            s.turns += r.turns.len();
            s.words += tokenize(&r.caption).len();
            for t in &r.turns {
                s.words += tokenize(&t.question).len() + tokenize(&t.answer).len();
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaTaskKind {
    /// Pick one of several candidate answers.
    MultipleChoice,
    /// Regress an integer count.
    Count,
    /// Produce a single answer token.
    Frame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub video_id: String,
    pub task: QaTaskKind,
    pub question: String,
    /// Multiple-choice options; empty for the other tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    /// Index of the correct candidate, the count, or unused.
    #[serde(default)]
    pub label: usize,
    /// Answer word for frame QA.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub answer: String,
}
