//! Human-readable tables and their line-delimited record forms.

use std::io::{self, Write};

use bist_core::metrics::{cider, corpus_bleu, corpus_rouge_l};
use bist_core::train::EpochRecord;
use bist_core::videoqa::QaMetrics;
use serde::Serialize;

use crate::config::Task;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

impl From<&EpochRecord> for EpochRow {
    fn from(r: &EpochRecord) -> Self {
        EpochRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            lr: r.lr,
        }
    }
}

pub fn write_epoch_header(out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{:>6} {:>12} {:>12} {:>12}", "epoch", "train_loss", "val_loss", "lr")
}

impl EpochRow {
    pub fn write(&self, out: &mut dyn Write) -> io::Result<()> {
        let val = self.val_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{:>6} {:>12.6} {:>12} {:>12.3e}", self.epoch, self.train_loss, val, self.lr)
    }
}

/// Generation metrics in the usual column order. METEOR is not computed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub split: String,
    pub items: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: Option<f64>,
    pub rouge_l: f64,
    pub cider: f64,
}

pub const METRIC_COLUMNS: [&str; 7] = ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "METEOR", "ROUGE-L", "CIDEr"];

impl MetricReport {
    pub fn compute(split: &str, candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<Self> {
        let b = corpus_bleu(candidates, references)?;
        Ok(MetricReport {
            split: split.to_string(),
            items: candidates.len(),
            bleu1: b[0],
            bleu2: b[1],
            bleu3: b[2],
            bleu4: b[3],
            meteor: None,
            rouge_l: corpus_rouge_l(candidates, references)?,
            cider: cider(candidates, references)?,
        })
    }

    pub fn cells(&self) -> [String; 7] {
        let f = |x: f64| format!("{x:.4}");
        [
            f(self.bleu1),
            f(self.bleu2),
            f(self.bleu3),
            f(self.bleu4),
            self.meteor.map_or_else(|| "n/a".to_string(), f),
            f(self.rouge_l),
            f(self.cider),
        ]
    }

    pub fn write_table(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "split {} ({} responses)", self.split, self.items)?;
        let header: Vec<String> = METRIC_COLUMNS.iter().map(|c| format!("{c:>8}")).collect();
        writeln!(out, "{}", header.join(" "))?;
        let row: Vec<String> = self.cells().iter().map(|c| format!("{c:>8}")).collect();
        writeln!(out, "{}", row.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QaReport {
    pub split: String,
    pub task: &'static str,
    pub examples: usize,
    pub accuracy: Option<f64>,
    pub count_l2: Option<f64>,
    pub count_accuracy: Option<f64>,
    pub ties: usize,
    pub unknown_answers: usize,
}

impl QaReport {
    pub fn new(split: &str, task: Task, m: &QaMetrics, unknown: usize) -> Self {
        QaReport {
            split: split.to_string(),
            task: task.name(),
            examples: m.examples,
            accuracy: m.accuracy,
            count_l2: m.count_l2,
            count_accuracy: m.count_accuracy,
            ties: m.ties,
            unknown_answers: unknown,
        }
    }
}

pub fn write_qa_table(out: &mut dyn Write, split: &str, task: Task, m: &QaMetrics, unknown: usize) -> io::Result<()> {
    writeln!(out, "split {split}, task {}, {} examples", task.name(), m.examples)?;
    if let Some(a) = m.accuracy {
        writeln!(out, "{:>10} {:>6} {:>8}", "accuracy", "ties", "unknown")?;
        writeln!(out, "{a:>10.4} {:>6} {unknown:>8}", m.ties)?;
    }
    if let (Some(l2), Some(acc)) = (m.count_l2, m.count_accuracy) {
        writeln!(out, "{:>10} {:>14}", "l2", "rounded_acc")?;
        writeln!(out, "{l2:>10.4} {acc:>14.4}")?;
    }
    Ok(())
}
