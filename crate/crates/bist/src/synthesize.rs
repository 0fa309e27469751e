//! Writes synthetic dialogue or QA datasets in the on-disk layout.

use std::fs;
use std::path::Path;

use bist_core::data::{CorpusStats, QaTaskKind};
use bist_core::synth::{SynthConfig, World};
use bist_core::vocab::tokenize;

use crate::config::Task;
use crate::dataset::{split_path, write_features, write_jsonl, SPLITS};
use crate::error::{io, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub task: Task,
    pub world: SynthConfig,
    pub seed: u64,
    /// Records per split, in `train, val, test` order.
    pub counts: [usize; 3],
    pub turns: usize,
    /// Candidates per multiple-choice question.
    pub options: usize,
}

/// Split `k` is drawn from `seed * 3 + k`, so splits never share videos.
pub fn split_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(3).wrapping_add(k as u64)
}

/// Generates every split into `dir` and returns per-split corpus counts
/// (QA splits count each record as one dialogue of one turn).
pub fn synthesize(dir: &Path, opts: &SynthOptions) -> Result<Vec<(String, CorpusStats)>> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut world = opts.world.clone();
    if let Task::Qa(_) = opts.task {
        world.audio = false;
    }
    let w = World::new(world)?;
    let mut stats = Vec::new();
    for (k, split) in SPLITS.iter().enumerate() {
        let n = opts.counts[k];
        if n == 0 {
            continue;
        }
        let seed = split_seed(opts.seed, k);
        let s = match opts.task {
            Task::Dialogue => {
                let (records, features) = w.dialogues(seed, n, opts.turns)?;
                write_jsonl(&split_path(dir, split), &records)?;
                write_features(dir, &features)?;
                CorpusStats::of(&records)
            }
            Task::Qa(kind) => {
                let (records, features) = w.qa(seed, n, kind, if kind == QaTaskKind::MultipleChoice { opts.options } else { 0 })?;
                write_jsonl(&split_path(dir, split), &records)?;
                write_features(dir, &features)?;
                CorpusStats {
                    dialogs: records.len(),
                    turns: records.len(),
                    words: records
                        .iter()
                        .map(|r| {
                            tokenize(&r.question).len()
                                + r.candidates.iter().map(|c| tokenize(c).len()).sum::<usize>()
                                + tokenize(&r.answer).len()
                        })
                        .sum(),
                }
            }
        };
        stats.push((split.to_string(), s));
    }
    Ok(stats)
}
