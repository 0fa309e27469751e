//! The training, evaluation, generation and QA-scoring commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bist_core::data::{dialogue_corpus, dialogue_samples, DialogueRecord, FeatureSet, QaRecord, QaTaskKind};
use bist_core::model::{dialogue_examples, DialogueExample, DialogueModel, GenerationObjective, ModelConfig};
use bist_core::train::{train, EpochRecord, Objective, TrainOptions, TrainState};
use bist_core::videoqa::{evaluate_qa, qa_examples, AnswerVocab, QaConfig, QaExample, QaMetrics, QaModel};
use bist_core::vocab::{tokenize, Vocabulary};
use bist_core::ParamStore;
use serde::Serialize;

use crate::checkpoint::{fingerprint, hex, Checkpoint};
use crate::config::{Overrides, Task, TrainConfig};
use crate::dataset::{dialogue_split, feature_widths, has_split, load_features, qa_split, read_jsonl, write_jsonl};
use crate::error::{io, Error, Result};
use crate::report::{write_epoch_header, EpochRow, MetricReport};

pub const LAST: &str = "last.ckpt";
pub const BEST: &str = "best.ckpt";

pub fn model_config(cfg: &TrainConfig, vocab_size: usize, d_vis: usize, d_aud: usize, has_audio: bool) -> Result<ModelConfig> {
    if cfg.audio && !has_audio {
        return Err(Error::Config("audio is enabled but the data has no audio features".into()));
    }
    let m = ModelConfig {
        vocab_size,
        d: cfg.d,
        d_att: cfg.d_att,
        heads: cfg.h_att,
        att_rounds: cfg.n_att,
        dec_blocks: cfg.n_dec,
        d_vis,
        d_aud: if cfg.audio { d_aud } else { 0 },
        video: cfg.video,
        audio: cfg.audio,
        caption: cfg.caption,
        t2s: cfg.t2s,
        s2t: cfg.s2t,
        pooling: cfg.pooling,
    };
    m.validate()?;
    Ok(m)
}

pub fn qa_config(cfg: &TrainConfig, vocab_size: usize, d_vis: usize, answers: usize, candidates: usize) -> Result<QaConfig> {
    let Task::Qa(task) = cfg.task else {
        return Err(Error::Config("not a QA task".into()));
    };
    Ok(QaConfig {
        task,
        vocab_size,
        d: cfg.d,
        d_att: cfg.d_att,
        heads: cfg.h_att,
        att_rounds: cfg.n_att,
        dec_blocks: cfg.n_dec,
        d_vis,
        t2s: cfg.t2s,
        s2t: cfg.s2t,
        pooling: cfg.pooling,
        answers,
        probe_per_candidate: cfg.probe_per_candidate,
        candidates,
        margin: cfg.margin,
    })
}

fn qa_corpus(records: &[QaRecord]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for r in records {
        out.push(tokenize(&r.question));
        out.extend(r.candidates.iter().map(|c| tokenize(c)));
    }
    out
}

fn frame_answers(records: &[QaRecord]) -> AnswerVocab {
    let words: Vec<String> = records
        .iter()
        .filter_map(|r| tokenize(&r.answer).into_iter().next())
        .collect();
    AnswerVocab::build(words.iter().map(String::as_str))
}

fn max_candidates(records: &[QaRecord]) -> usize {
    records.iter().map(|r| r.candidates.len()).max().unwrap_or(0).max(1)
}

/// A built model of either kind.
pub enum Model {
    Dialogue(DialogueModel),
    Qa(QaModel),
}

impl Model {
    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Dialogue(m) => &m.params,
            Model::Qa(m) => &m.params,
        }
    }
}

/// Rebuilds the model stored in a checkpoint (its current parameters).
pub fn restore(ck: &Checkpoint, params: ParamStore) -> Result<Model> {
    let cfg = &ck.config;
    Ok(match cfg.task {
        Task::Dialogue => Model::Dialogue(DialogueModel::with_params(
            model_config(cfg, ck.vocab.len(), ck.d_vis, ck.d_aud, ck.d_aud > 0 || !cfg.audio)?,
            params,
        )?),
        Task::Qa(_) => {
            let candidates = qa_candidates_of(&params);
            Model::Qa(QaModel::with_params(
                qa_config(cfg, ck.vocab.len(), ck.d_vis, ck.answers.len(), candidates)?,
                params,
            )?)
        }
    })
}

fn qa_candidates_of(params: &ParamStore) -> usize {
    params.iter().filter(|(_, p)| p.name.starts_with("qa.probe")).count().max(1)
}

pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_loss: Option<f64>,
    pub last: PathBuf,
    pub best: PathBuf,
    pub fingerprint: String,
}

/// Vocabularies and feature widths a checkpoint records.
struct Meta {
    vocab: Vocabulary,
    answers: Vec<String>,
    d_vis: usize,
    d_aud: usize,
}

impl Meta {
    fn fingerprint(&self, cfg: &TrainConfig) -> [u8; 32] {
        fingerprint(cfg, self.d_vis, self.d_aud, self.vocab.tokens(), &self.answers)
    }
}

struct Prepared<E, M> {
    meta: Meta,
    train: Vec<E>,
    val: Vec<E>,
    model: M,
}

fn prepare_dialogue(cfg: &TrainConfig) -> Result<Prepared<DialogueExample, DialogueModel>> {
    let (records, features) = dialogue_split(&cfg.data_dir, "train")?;
    let corpus = dialogue_corpus(&records);
    let vocab = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), cfg.min_count)?;
    let (d_vis, d_aud, has_audio) = feature_widths(&features)?;
    let train = dialogue_examples(&dialogue_samples(&records, &vocab)?, &features)?;
    let val = if has_split(&cfg.data_dir, "val") {
        let (vr, vf) = dialogue_split(&cfg.data_dir, "val")?;
        check_widths(&vf, (d_vis, d_aud, has_audio))?;
        dialogue_examples(&dialogue_samples(&vr, &vocab)?, &vf)?
    } else {
        Vec::new()
    };
    let mc = model_config(cfg, vocab.len(), d_vis, d_aud, has_audio)?;
    let d_aud = mc.d_aud;
    Ok(Prepared {
        meta: Meta {
            vocab,
            answers: Vec::new(),
            d_vis,
            d_aud,
        },
        train,
        val,
        model: DialogueModel::new(mc, cfg.seed)?,
    })
}

fn prepare_qa(cfg: &TrainConfig) -> Result<Prepared<QaExample, QaModel>> {
    let (records, features) = qa_split(&cfg.data_dir, "train")?;
    let corpus = qa_corpus(&records);
    let vocab = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), cfg.min_count)?;
    let (d_vis, _, _) = feature_widths(&features)?;
    let answers = frame_answers(&records);
    let (train, _) = qa_examples(&records, &features, &vocab, Some(&answers))?;
    let val = if has_split(&cfg.data_dir, "val") {
        let (vr, vf) = qa_split(&cfg.data_dir, "val")?;
        qa_examples(&vr, &vf, &vocab, Some(&answers))?.0
    } else {
        Vec::new()
    };
    let frame = cfg.task == Task::Qa(QaTaskKind::Frame);
    let qc = qa_config(cfg, vocab.len(), d_vis, if frame { answers.len() } else { 0 }, max_candidates(&records))?;
    Ok(Prepared {
        meta: Meta {
            vocab,
            answers: if frame { answers.words } else { Vec::new() },
            d_vis,
            d_aud: 0,
        },
        train,
        val,
        model: QaModel::new(qc, cfg.seed)?,
    })
}

fn check_widths(features: &FeatureSet, expected: (usize, usize, bool)) -> Result<()> {
    let found = feature_widths(features)?;
    if found != expected {
        return Err(Error::Data(format!("feature widths {found:?} differ from the training split's {expected:?}")));
    }
    Ok(())
}

fn options(cfg: &TrainConfig) -> TrainOptions {
    TrainOptions {
        max_epochs: cfg.max_epochs,
        batch_size: cfg.batch_size,
        warmup_epochs: cfg.warmup_epochs,
        lr_scale: cfg.lr_scale,
        shuffle_seed: cfg.seed,
        d: cfg.d,
    }
}

/// Fresh training state, or the one stored in `resume` after checking its
/// fingerprint.
fn start(cfg: &TrainConfig, meta: &Meta, resume: Option<&Path>, params: &mut ParamStore) -> Result<TrainState> {
    match resume {
        None => Ok(TrainState::new(params)),
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check(&meta.fingerprint(cfg))?;
            *params = ck.params;
            Ok(ck.state)
        }
    }
}

/// Trains per `cfg`, optionally continuing from a checkpoint. Writes
/// `last.ckpt` after every epoch, `best.ckpt` whenever the selection loss
/// improves, and `train_report.jsonl`; prints one table row per epoch.
pub fn run_train(cfg: &TrainConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    cfg.validate()?;
    match cfg.task {
        Task::Dialogue => {
            let Prepared { meta, train, val, mut model } = prepare_dialogue(cfg)?;
            let mut state = start(cfg, &meta, resume, &mut model.params)?;
            let DialogueModel { net, params, .. } = &mut model;
            let objective = GenerationObjective {
                net,
                smoothing: cfg.label_smoothing,
            };
            fit(cfg, &meta, params, &mut state, &objective, &train, &val, out)
        }
        Task::Qa(_) => {
            let Prepared { meta, train, val, mut model } = prepare_qa(cfg)?;
            let mut state = start(cfg, &meta, resume, &mut model.params)?;
            let QaModel { net, params } = &mut model;
            fit(cfg, &meta, params, &mut state, &*net, &train, &val, out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fit<O: Objective>(
    cfg: &TrainConfig,
    meta: &Meta,
    params: &mut ParamStore,
    state: &mut TrainState,
    objective: &O,
    train_set: &[O::Example],
    val_set: &[O::Example],
    out: &mut dyn Write,
) -> Result<TrainSummary> {
    let fp = meta.fingerprint(cfg);
    fs::create_dir_all(&cfg.out_dir).map_err(io(&cfg.out_dir))?;
    let last = cfg.out_dir.join(LAST);
    let best = cfg.out_dir.join(BEST);
    let report_path = cfg.out_dir.join("train_report.jsonl");
    let snapshot = |params: &ParamStore, state: &TrainState| Checkpoint {
        config: cfg.clone(),
        fingerprint: fp,
        vocab: meta.vocab.tokens().to_vec(),
        answers: meta.answers.clone(),
        d_vis: meta.d_vis,
        d_aud: meta.d_aud,
        params: params.clone(),
        state: state.clone(),
    };
    if state.epochs_done == 0 || state.epochs_done >= cfg.max_epochs {
        // an untrained run, or one that diverges in its first epoch, still
        // leaves a checkpoint behind
        let ck = snapshot(params, state);
        ck.save(&last)?;
        if !best.exists() || state.epochs_done == 0 {
            ck.save(&best)?;
        }
    }
    write_epoch_header(out).map_err(io("stdout"))?;
    let mut saved: Result<()> = Ok(());
    let result = train(params, state, objective, train_set, val_set, &options(cfg), |rec, params, st| {
        let step = (|| -> Result<()> {
            EpochRow::from(rec).write(out).map_err(io("stdout"))?;
            let ck = snapshot(params, st);
            if st.best_loss == Some(rec.val_loss.unwrap_or(rec.train_loss)) {
                let mut b = ck.clone();
                b.state.best_params = None;
                b.save(&best)?;
            }
            ck.save(&last)?;
            let rows: Vec<EpochRow> = st.history.iter().map(EpochRow::from).collect();
            write_jsonl(&report_path, &rows)
        })();
        match step {
            Ok(()) => true,
            Err(e) => {
                saved = Err(e);
                false
            }
        }
    });
    saved?;
    match result {
        Err(bist_core::Error::Diverged(reason)) => Err(Error::Diverged {
            epoch: state.epochs_done,
            reason,
            kept: last,
        }),
        Err(e) => Err(e.into()),
        Ok(()) => Ok(TrainSummary {
            epochs: state.history.clone(),
            best_loss: state.best_loss,
            last,
            best,
            fingerprint: hex(&fp),
        }),
    }
}

/// A checkpoint with the configuration it will run under.
pub struct Loaded {
    pub config: TrainConfig,
    pub checkpoint: Checkpoint,
    pub vocab: Vocabulary,
    pub model: Model,
}

/// Loads a checkpoint, applies command-line overrides and refuses to run
/// when the resulting structure or the data's feature widths disagree with
/// the stored fingerprint.
pub fn load_for(path: &Path, overrides: &Overrides, features: Option<&FeatureSet>) -> Result<Loaded> {
    let checkpoint = Checkpoint::load(path)?;
    let mut config = checkpoint.config.clone();
    overrides.apply(&mut config)?;
    let (d_vis, d_aud) = match features {
        Some(f) => {
            let (v, a, _) = feature_widths(f)?;
            (v, if config.audio { a } else { 0 })
        }
        None => (checkpoint.d_vis, checkpoint.d_aud),
    };
    checkpoint.check(&fingerprint(&config, d_vis, d_aud, &checkpoint.vocab, &checkpoint.answers))?;
    let vocab = Vocabulary::from_tokens(checkpoint.vocab.clone())?;
    let model = restore(&checkpoint, checkpoint.params.clone())?;
    Ok(Loaded {
        config,
        checkpoint,
        vocab,
        model,
    })
}

fn data_dir_of(path: &Path, overrides: &Overrides) -> Result<PathBuf> {
    let mut cfg = Checkpoint::load(path)?.config;
    overrides.apply(&mut cfg)?;
    Ok(cfg.data_dir)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub video_id: String,
    pub turn: usize,
    pub prediction: String,
    pub references: Vec<String>,
}

fn dialogue_model(loaded: &Loaded) -> Result<&DialogueModel> {
    match &loaded.model {
        Model::Dialogue(m) => Ok(m),
        Model::Qa(_) => Err(Error::Config("this is a QA checkpoint; use score-qa".into())),
    }
}

/// Beam-decodes every turn of `records` and returns the responses.
pub fn decode_turns(loaded: &Loaded, records: &[DialogueRecord], features: &FeatureSet) -> Result<Vec<Prediction>> {
    let model = dialogue_model(loaded)?;
    let samples = dialogue_samples(records, &loaded.vocab)?;
    let examples = dialogue_examples(&samples, features)?;
    let search = DialogueModel::search_config(loaded.config.beam_size, loaded.config.max_len);
    let mut turn = 0;
    let mut out = Vec::with_capacity(samples.len());
    for (i, (s, ex)) in samples.iter().zip(&examples).enumerate() {
        turn = if i > 0 && samples[i - 1].video_id == s.video_id { turn + 1 } else { 0 };
        let hyp = model.generate(&ex.input(), search)?;
        out.push(Prediction {
            video_id: s.video_id.clone(),
            turn,
            prediction: loaded.vocab.decode(hyp.response(bist_core::vocab::EOS))?,
            references: s.references.iter().map(|r| r.join(" ")).collect(),
        });
    }
    Ok(out)
}

/// Decodes a split and scores it with BLEU-1..4, ROUGE-L and CIDEr.
pub fn run_evaluate(path: &Path, split: &str, overrides: &Overrides, out: &mut dyn Write) -> Result<MetricReport> {
    let data_dir = data_dir_of(path, overrides)?;
    let (records, features) = dialogue_split(&data_dir, split)?;
    let loaded = load_for(path, overrides, Some(&features))?;
    let preds = decode_turns(&loaded, &records, &features)?;
    let cands: Vec<Vec<String>> = preds.iter().map(|p| tokenize(&p.prediction)).collect();
    let refs: Vec<Vec<Vec<String>>> = preds
        .iter()
        .map(|p| p.references.iter().map(|r| tokenize(r)).collect())
        .collect();
    let report = MetricReport::compute(split, &cands, &refs)?;
    report.write_table(out).map_err(io("stdout"))?;
    let dir = &loaded.config.out_dir;
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_jsonl(&dir.join(format!("predictions_{split}.jsonl")), &preds)?;
    write_jsonl(&dir.join(format!("evaluate_{split}.jsonl")), std::slice::from_ref(&report))?;
    Ok(report)
}

/// Answers the last turn of every dialogue in a JSONL file, with the
/// earlier turns as history.
pub fn run_generate(path: &Path, dialogues: &Path, overrides: &Overrides, out: &mut dyn Write) -> Result<Vec<String>> {
    let data_dir = data_dir_of(path, overrides)?;
    let records: Vec<DialogueRecord> = read_jsonl(dialogues)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{} holds no dialogues", dialogues.display())));
    }
    let features = load_features(&data_dir, records.iter().map(|r| r.video_id.as_str()))?;
    let loaded = load_for(path, overrides, Some(&features))?;
    let mut responses = Vec::with_capacity(records.len());
    for r in &records {
        r.validate()?;
        let preds = decode_turns(&loaded, std::slice::from_ref(r), &features)?;
        let last = preds.last().map(|p| p.prediction.clone()).unwrap_or_default();
        writeln!(out, "{last}").map_err(io("stdout"))?;
        responses.push(last);
    }
    Ok(responses)
}

/// Scores a QA split: accuracy for multiple-choice and frame QA, mean
/// squared error (and rounded-count accuracy) for counting.
pub fn run_score_qa(path: &Path, split: &str, overrides: &Overrides, out: &mut dyn Write) -> Result<QaMetrics> {
    let data_dir = data_dir_of(path, overrides)?;
    let (records, features) = qa_split(&data_dir, split)?;
    let loaded = load_for(path, overrides, Some(&features))?;
    let Model::Qa(model) = &loaded.model else {
        return Err(Error::Config("this is a dialogue checkpoint; use evaluate".into()));
    };
    let answers = AnswerVocab {
        words: loaded.checkpoint.answers.clone(),
    };
    let answers = (!answers.is_empty()).then_some(&answers);
    if let Some(r) = records.iter().find(|r| Task::Qa(r.task) != loaded.config.task) {
        return Err(Error::Data(format!(
            "record for {} is a {:?} question but the checkpoint is {}",
            r.video_id,
            r.task,
            loaded.config.task.name()
        )));
    }
    let (examples, unknown) = qa_examples(&records, &features, &loaded.vocab, answers)?;
    let metrics = evaluate_qa(model, &examples)?;
    crate::report::write_qa_table(out, split, loaded.config.task, &metrics, unknown).map_err(io("stdout"))?;
    let dir = &loaded.config.out_dir;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let record = crate::report::QaReport::new(split, loaded.config.task, &metrics, unknown);
    write_jsonl(&dir.join(format!("score_qa_{split}.jsonl")), &[record])?;
    Ok(metrics)
}
