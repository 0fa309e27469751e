//! Generation metrics over tokenized sentences: BLEU-n, ROUGE-L and
//! CIDEr-D.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{data, Result};
use crate::math;

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = Counts::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_default() += 1;
        }
    }
    out
}

/// Clipped matches and candidate n-gram total for one order.
fn clipped(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: Counts<'_> = Counts::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn combine(matched: &[usize], totals: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (&m, &t) in matched.iter().zip(totals) {
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += math::ln(m as f64 / t as f64);
    }
    let bp = if c < r { math::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    bp * math::exp(log_sum / matched.len() as f64)
}

/// Sentence BLEU with orders `1..=n`, uniform weights and no smoothing.
pub fn bleu_n(candidate: &[String], references: &[Vec<String>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(data(alloc::format!("BLEU order must be 1..=4, got {n}")));
    }
    if references.is_empty() {
        return Err(data("BLEU needs at least one reference"));
    }
    let (matched, totals): (Vec<usize>, Vec<usize>) = (1..=n).map(|k| clipped(candidate, references, k)).unzip();
    Ok(combine(&matched, &totals, candidate.len(), closest_ref_len(candidate.len(), references)))
}

/// Corpus BLEU-1..4: clipped counts and lengths summed over the corpus
/// before combining.
pub fn corpus_bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<[f64; 4]> {
    check_corpus(candidates, references)?;
    let mut matched = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in candidates.iter().zip(references) {
        for k in 0..4 {
            let (m, t) = clipped(cand, refs, k + 1);
            matched[k] += m;
            totals[k] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    let mut out = [0.0; 4];
    for n in 1..=4 {
        out[n - 1] = combine(&matched[..n], &totals[..n], c, r);
    }
    Ok(out)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure with recall weighted by `β = 1.2`; the best reference
/// counts.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let l = lcs(candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / candidate.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn corpus_rouge_l(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum();
    Ok(sum / candidates.len() as f64)
}

fn check_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(data("metric corpus is empty"));
    }
    if candidates.len() != references.len() {
        return Err(data("candidate and reference counts differ"));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(data("every candidate needs at least one reference"));
    }
    Ok(())
}

pub const CIDER_SIGMA: f64 = 6.0;

/// Per-order tf-idf vectors with their norms and the sentence length.
struct TfIdf<'a> {
    vecs: [BTreeMap<&'a [String], f64>; 4],
    norms: [f64; 4],
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], df: &BTreeMap<&'a [String], usize>, log_n: f64) -> TfIdf<'a> {
    let mut vecs: [BTreeMap<&[String], f64>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for n in 0..4 {
        for (g, tf) in ngrams(tokens, n + 1) {
            let d = math::ln(df.get(g).copied().unwrap_or(0).max(1) as f64);
            let v = tf as f64 * (log_n - d);
            norms[n] += v * v;
            vecs[n].insert(g, v);
        }
        norms[n] = math::sqrt(norms[n]);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(hyp: &TfIdf<'_>, r: &TfIdf<'_>) -> [f64; 4] {
    let delta = hyp.len as f64 - r.len as f64;
    let penalty = math::exp(-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA));
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mut v = 0.0;
        for (g, &h) in &hyp.vecs[n] {
            if let Some(&rv) = r.vecs[n].get(g) {
                v += h.min(rv) * rv;
            }
        }
        if hyp.norms[n] != 0.0 && r.norms[n] != 0.0 {
            v /= hyp.norms[n] * r.norms[n];
        }
        out[n] = v * penalty;
    }
    out
}

/// Corpus CIDEr-D: document frequencies come from the references, n-gram
/// orders 1..4 are averaged, candidate counts are clipped to the reference
/// counts, a Gaussian length penalty (`σ = 6`) applies and the result is
/// scaled by 10.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_default() += 1;
        }
    }
    let log_n = math::ln(candidates.len() as f64);
    let mut total = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let hyp = tfidf(cand, &df, log_n);
        let mut acc = [0.0; 4];
        for r in refs {
            let rv = tfidf(r, &df, log_n);
            for (a, s) in acc.iter_mut().zip(cider_sim(&hyp, &rv)) {
                *a += s;
            }
        }
        let mean: f64 = acc.iter().sum::<f64>() / 4.0 / refs.len() as f64;
        total += 10.0 * mean;
    }
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::tokenize;

    fn refs(rs: &[&str]) -> Vec<Vec<String>> {
        rs.iter().map(|r| tokenize(r)).collect()
    }

    #[test]
    fn bleu_examples() {
        let c = tokenize("the cat sat on the mat");
        for n in 1..=4 {
            assert_eq!(bleu_n(&c, &refs(&["the cat sat on the mat"]), n).unwrap(), 1.0);
        }
        assert_eq!(bleu_n(&tokenize("x y z"), &refs(&["a b c"]), 1).unwrap(), 0.0);
        let short = bleu_n(&tokenize("the cat sat"), &refs(&["the cat sat on the mat"]), 1).unwrap();
        assert!((short - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(bleu_n(&[], &refs(&["a"]), 2).unwrap(), 0.0);
        assert!(bleu_n(&c, &refs(&["a"]), 5).is_err());
    }

    #[test]
    fn rouge_examples() {
        let same = tokenize("a b c");
        assert_eq!(rouge_l(&same, &[same.clone()]), 1.0);
        assert_eq!(rouge_l(&tokenize("a b"), &refs(&["c d"])), 0.0);
        let f = rouge_l(&tokenize("a b c d"), &refs(&["a c d"]));
        let (p, r, b2) = (0.75, 1.0, 1.44);
        assert!((f - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-15);
        assert_eq!(rouge_l(&[], &refs(&["a"])), 0.0);
    }

    #[test]
    fn cider_examples() {
        let cands = alloc::vec![tokenize("a man is cooking"), tokenize("a dog runs")];
        let rs = alloc::vec![refs(&["a man is cooking food"]), refs(&["the cat sleeps"])];
        let s = cider(&cands, &rs).unwrap();
        assert!(s > 0.0);
        let disjoint = cider(&[tokenize("x y")], &[refs(&["a b"])]).unwrap();
        assert_eq!(disjoint, 0.0);
        let swapped = cider(&[cands[1].clone(), cands[0].clone()], &[rs[1].clone(), rs[0].clone()]).unwrap();
        assert!((s - swapped).abs() < 1e-12);
        assert!(cider(&[], &[]).is_err());
    }
}
