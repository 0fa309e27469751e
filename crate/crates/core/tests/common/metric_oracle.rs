//! Hash-map and recursion based BLEU, ROUGE-L and CIDEr-D, written
//! without reference to the library's implementation.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

pub type Sent = Vec<String>;

fn grams(s: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    if s.len() >= n {
        for i in 0..=s.len() - n {
            *out.entry(s[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches, candidate n-gram count.
fn modified_precision(c: &[String], refs: &[Sent], n: usize) -> (f64, f64) {
    let cand = grams(c, n);
    let mut hits = 0.0;
    for (g, &k) in &cand {
        let best = refs.iter().map(|r| *grams(r, n).get(g).unwrap_or(&0)).max().unwrap_or(0);
        hits += k.min(best) as f64;
    }
    (hits, cand.values().sum::<usize>() as f64)
}

fn effective_ref_len(c: usize, refs: &[Sent]) -> f64 {
    let mut best = refs[0].len();
    for r in refs {
        let (dr, db) = ((r.len() as i64 - c as i64).abs(), (best as i64 - c as i64).abs());
        if dr < db || (dr == db && r.len() < best) {
            best = r.len();
        }
    }
    best as f64
}

fn geo_bleu(p: &[(f64, f64)], c: f64, r: f64) -> f64 {
    if c == 0.0 || p.iter().any(|&(h, t)| h == 0.0 || t == 0.0) {
        return 0.0;
    }
    let log_mean = p.iter().map(|&(h, t)| (h / t).ln()).sum::<f64>() / p.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_mean.exp()
}

pub fn oracle_bleu(c: &[String], refs: &[Sent], n: usize) -> f64 {
    let p: Vec<_> = (1..=n).map(|k| modified_precision(c, refs, k)).collect();
    geo_bleu(&p, c.len() as f64, effective_ref_len(c.len(), refs))
}

pub fn oracle_corpus_bleu(cs: &[Sent], rs: &[Vec<Sent>], n: usize) -> f64 {
    let mut p = vec![(0.0, 0.0); n];
    let (mut c, mut r) = (0.0, 0.0);
    for (cand, refs) in cs.iter().zip(rs) {
        for (k, slot) in p.iter_mut().enumerate() {
            let (h, t) = modified_precision(cand, refs, k + 1);
            slot.0 += h;
            slot.1 += t;
        }
        c += cand.len() as f64;
        r += effective_ref_len(cand.len(), refs);
    }
    geo_bleu(&p, c, r)
}

/// Memoized recursive LCS.
fn lcs(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = if a[a.len() - 1] == b[b.len() - 1] {
        1 + lcs(&a[..a.len() - 1], &b[..b.len() - 1], memo)
    } else {
        lcs(&a[..a.len() - 1], b, memo).max(lcs(a, &b[..b.len() - 1], memo))
    };
    memo.insert(key, v);
    v
}

pub fn oracle_rouge(c: &[String], refs: &[Sent]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs(c, r, &mut HashMap::new()) as f64;
        if l == 0.0 {
            continue;
        }
        let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
        best = best.max((1.0 + beta2) * p * rec / (rec + beta2 * p));
    }
    best
}

pub fn oracle_cider(cs: &[Sent], rs: &[Vec<Sent>]) -> f64 {
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for refs in rs {
        let mut seen = HashSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(grams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let ref_len = (cs.len() as f64).ln();
    let vecs = |s: &[String]| -> Vec<(HashMap<Vec<String>, f64>, f64)> {
        (1..=4)
            .map(|n| {
                let v: HashMap<_, _> = grams(s, n)
                    .into_iter()
                    .map(|(g, tf)| {
                        let d = df.get(&g).copied().unwrap_or(0.0).max(1.0).ln();
                        (g, tf as f64 * (ref_len - d))
                    })
                    .collect();
                let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
                (v, norm)
            })
            .collect()
    };
    let mut total = 0.0;
    for (c, refs) in cs.iter().zip(rs) {
        let vc = vecs(c);
        let mut score = [0.0; 4];
        for r in refs {
            let vr = vecs(r);
            let delta = c.len() as f64 - r.len() as f64;
            for n in 0..4 {
                let mut val = 0.0;
                for (g, &h) in &vc[n].0 {
                    if let Some(&x) = vr[n].0.get(g) {
                        val += h.min(x) * x;
                    }
                }
                if vc[n].1 != 0.0 && vr[n].1 != 0.0 {
                    val /= vc[n].1 * vr[n].1;
                }
                score[n] += val * (-delta * delta / 72.0).exp();
            }
        }
        total += score.iter().sum::<f64>() / 4.0 / refs.len() as f64 * 10.0;
    }
    total / cs.len() as f64
}

pub fn sentence(r: &mut ChaCha8Rng) -> Sent {
    const WORDS: [&str; 6] = ["a", "the", "cat", "sat", "on", "mat"];
    let len = r.random_range(1..9);
    (0..len).map(|_| WORDS[r.random_range(0..WORDS.len())].to_string()).collect()
}

pub fn corpus(seed: u64) -> (Vec<Sent>, Vec<Vec<Sent>>) {
    let mut r = rng(seed);
    let cands: Vec<Sent> = (0..20).map(|_| sentence(&mut r)).collect();
    let refs = (0..20)
        .map(|_| {
            let k = r.random_range(1..4);
            (0..k).map(|_| sentence(&mut r)).collect()
        })
        .collect();
    (cands, refs)
}

/// Largest disagreement between `bist_core::metrics` and the oracle over
/// the sentence and corpus metrics of `seeds` random corpora of 20 pairs.
pub fn worst_disagreement(seeds: u64) -> f64 {
    use bist_core::metrics::{bleu_n, cider, corpus_bleu, corpus_rouge_l, rouge_l};
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let (cands, refs) = corpus(100 + seed);
        for (c, rs) in cands.iter().zip(&refs) {
            for n in 1..=4 {
                worst = worst.max((bleu_n(c, rs, n).unwrap() - oracle_bleu(c, rs, n)).abs());
            }
            worst = worst.max((rouge_l(c, rs) - oracle_rouge(c, rs)).abs());
        }
        let b = corpus_bleu(&cands, &refs).unwrap();
        for n in 1..=4 {
            worst = worst.max((b[n - 1] - oracle_corpus_bleu(&cands, &refs, n)).abs());
        }
        let rouge = cands.iter().zip(&refs).map(|(c, r)| oracle_rouge(c, r)).sum::<f64>() / cands.len() as f64;
        worst = worst.max((corpus_rouge_l(&cands, &refs).unwrap() - rouge).abs());
        worst = worst.max((cider(&cands, &refs).unwrap() - oracle_cider(&cands, &refs)).abs());
    }
    worst
}
