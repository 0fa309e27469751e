//! Greedy and beam-search decoding over any next-token scorer.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{config, Result};
use crate::math;

/// Something that assigns log-probabilities to the next token given a
/// prefix that starts with the start token.
pub trait StepScorer {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub sos: usize,
    pub eos: usize,
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(config("beam size must be at least 1"));
        }
        if self.max_len < 1 {
            return Err(config("max_len must be at least 1"));
        }
        Ok(())
    }
}

/// A finished or partial hypothesis. `tokens` excludes the start token and
/// includes the end token when finished.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Cumulative log-probability divided by the number of generated tokens.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// Tokens without the trailing end marker.
    pub fn response(&self, eos: usize) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Picks the most probable token at every step until the end token or
/// `max_len` tokens.
pub fn greedy_decode<S: StepScorer>(scorer: &mut S, cfg: SearchConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut prefix = alloc::vec![cfg.sos];
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < cfg.max_len {
        let lp = scorer.next_log_probs(&prefix)?;
        let tok = argmax(&lp);
        hyp.log_prob += lp[tok];
        hyp.tokens.push(tok);
        prefix.push(tok);
        if tok == cfg.eos {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

struct Candidate {
    parent: usize,
    token: usize,
    step_log_prob: f64,
    log_prob: f64,
    len: usize,
}

impl Candidate {
    fn score(&self) -> f64 {
        self.log_prob / self.len as f64
    }
}

/// Higher normalized score first; ties fall back to the raw cumulative
/// log-probability, the step log-probability, then lower parent and token
/// indices, so a beam of one reproduces greedy decoding exactly.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(b.log_prob.total_cmp(&a.log_prob))
        .then(b.step_log_prob.total_cmp(&a.step_log_prob))
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Length-normalized beam search. Hypotheses stop at the end token; the
/// search stops once `beam_size` hypotheses have finished, none remain
/// alive, or `max_len` tokens have been generated.
pub fn beam_search<S: StepScorer>(scorer: &mut S, cfg: SearchConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut alive = alloc::vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut candidates = Vec::new();
        for (pi, hyp) in alive.iter().enumerate() {
            let mut prefix = alloc::vec![cfg.sos];
            prefix.extend_from_slice(&hyp.tokens);
            let lp = scorer.next_log_probs(&prefix)?;
            for (token, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                candidates.push(Candidate {
                    parent: pi,
                    token,
                    step_log_prob: l,
                    log_prob: hyp.log_prob + l,
                    len: hyp.tokens.len() + 1,
                });
            }
        }
        candidates.sort_by(rank);
        let slots = cfg.beam_size - finished.len();
        let mut next = Vec::new();
        for c in candidates.into_iter().take(slots) {
            let mut tokens = alive[c.parent].tokens.clone();
            tokens.push(c.token);
            let done = c.token == cfg.eos;
            let hyp = Hypothesis {
                tokens,
                log_prob: c.log_prob,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        alive = next;
        if finished.len() >= cfg.beam_size || alive.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() { alive } else { finished };
    let best = pool
        .into_iter()
        .min_by(|a, b| b.score().total_cmp(&a.score()).then(b.log_prob.total_cmp(&a.log_prob)))
        .expect("beam search always keeps at least one hypothesis");
    Ok(best)
}

/// Converts probabilities to log-probabilities (`ln 0 = -∞`).
pub fn log_probs(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if p > 0.0 { math::ln(p) } else { f64::NEG_INFINITY })
        .collect()
}
