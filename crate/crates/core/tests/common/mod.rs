//! Independent reference implementations written with plain loops over
//! nested vectors, plus random fixtures.
#![allow(dead_code)]

use bist_core::decoder::Source;
use bist_core::generator::Pointer;
use bist_core::layers::{Builder, Linear, MultiHeadAttention, Norm};
use bist_core::reasoning::{AttentionStage, DirectedReasoning, Direction, Fusion};
use bist_core::{Initializer, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradcheck;
pub mod metric_oracle;

pub type Mat = Vec<Vec<f64>>;

pub const EPS: f64 = 1e-6;
pub const MASKED: f64 = -1e9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(r: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Overwrites every parameter with uniform noise so zero biases and unit
/// gains do not hide mistakes.
pub fn randomize(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        for x in p.value.data_mut() {
            *x = r.random_range(-0.6..0.6);
        }
    }
}

pub fn build<T>(seed: u64, f: impl FnOnce(&mut Builder<'_>) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let out = f(&mut Builder::new(&mut store, &mut init));
    (out, store)
}

pub fn to_mat(t: &Tensor) -> Mat {
    let d = t.dims();
    assert_eq!(d.len(), 2);
    (0..d[0]).map(|i| (0..d[1]).map(|j| t.get(&[i, j])).collect()).collect()
}

pub fn to_cube(t: &Tensor) -> Vec<Mat> {
    let d = t.dims();
    assert_eq!(d.len(), 3);
    (0..d[0])
        .map(|i| (0..d[1]).map(|j| (0..d[2]).map(|k| t.get(&[i, j, k])).collect()).collect())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn flat3(c: &[Mat]) -> Vec<f64> {
    c.iter().flat_map(flat).collect()
}

pub fn param<'a>(store: &'a ParamStore, id: bist_core::ParamId) -> &'a Tensor {
    store.get(id)
}

pub fn linear(store: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    let w = store.get(l.weight);
    let b = l.bias.map(|b| store.get(b));
    x.iter()
        .map(|row| {
            (0..l.out_dim)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b.data()[o]);
                    for (i, &xi) in row.iter().enumerate() {
                        s += xi * w.get(&[i, o]);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn layer_norm(store: &ParamStore, n: &Norm, x: &Mat) -> Mat {
    let g = store.get(n.gain).data();
    let b = store.get(n.bias).data();
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + EPS).sqrt() * g[i] + b[i])
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Multi-head attention by loops. `mask[l][a]` is added to the logits.
/// Returns the merged output and scores `[h][Lq][A]`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, heads: usize, mask: Option<&Mat>) -> (Mat, Vec<Mat>) {
    let dk = q[0].len() / heads;
    let dv = v[0].len() / heads;
    let mut out = vec![vec![0.0; dv * heads]; q.len()];
    let mut scores = Vec::new();
    for h in 0..heads {
        let mut sh = Vec::new();
        for (l, qrow) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .enumerate()
                .map(|(a, krow)| {
                    let mut s = 0.0;
                    for c in 0..dk {
                        s += qrow[h * dk + c] * krow[h * dk + c];
                    }
                    s / (dk as f64).sqrt() + mask.map_or(0.0, |m| m[l][a])
                })
                .collect();
            let p = softmax(&logits);
            for c in 0..dv {
                out[l][h * dv + c] = p.iter().zip(v).map(|(w, vrow)| w * vrow[h * dv + c]).sum();
            }
            sh.push(p);
        }
        scores.push(sh);
    }
    (out, scores)
}

fn finish(store: &ParamStore, st: &AttentionStage, attended: &Mat, skip: &Mat) -> Mat {
    let ff = relu(&linear(store, &st.feed_forward, attended));
    layer_norm(store, &st.norm, &add(&ff, skip))
}

/// Query stacked to every group, attention along axis 1 of each group.
pub fn stage_grouped(store: &ParamStore, st: &AttentionStage, features: &[Mat], query: &Mat) -> Vec<Mat> {
    let q = linear(store, &st.query, query);
    features
        .iter()
        .map(|grp| {
            let k = linear(store, &st.key, grp);
            let (att, _) = attention(&q, &k, grp, st.heads, None);
            finish(store, st, &att, query)
        })
        .collect()
}

/// Query token `l` attends over `features[l]`.
pub fn stage_per_token(store: &ParamStore, st: &AttentionStage, features: &[Mat], query: &Mat) -> Mat {
    let q = linear(store, &st.query, query);
    let att: Mat = features
        .iter()
        .enumerate()
        .map(|(l, row)| {
            let k = linear(store, &st.key, row);
            attention(&q[l..l + 1].to_vec(), &k, row, st.heads, None).0.remove(0)
        })
        .collect();
    finish(store, st, &att, query)
}

pub fn stage_flat(store: &ParamStore, st: &AttentionStage, features: &Mat, query: &Mat, key_mask: Option<&[f64]>) -> Mat {
    let q = linear(store, &st.query, query);
    let k = linear(store, &st.key, features);
    let mask = key_mask.map(|m| vec![m.to_vec(); query.len()]);
    let (att, _) = attention(&q, &k, features, st.heads, mask.as_ref());
    finish(store, st, &att, query)
}

/// Transposes the first two axes of a `[A][B][d]` cube.
pub fn swap01(x: &[Mat]) -> Vec<Mat> {
    (0..x[0].len()).map(|j| (0..x.len()).map(|i| x[i][j].clone()).collect()).collect()
}

/// Either reasoning direction over `video[F][P]`.
pub fn directed(store: &ParamStore, dir: &DirectedReasoning, video: &[Mat], query: &Mat) -> Mat {
    let grouped = match dir.direction {
        Direction::TemporalToSpatial => swap01(video),
        Direction::SpatialToTemporal => video.to_vec(),
    };
    let first = stage_grouped(store, &dir.first, &grouped, query);
    stage_per_token(store, &dir.second, &swap01(&first), query)
}

pub fn fusion(store: &ParamStore, f: &Fusion, query: &Mat, comps: &[Mat]) -> (Mat, Mat) {
    let joined: Mat = (0..query.len())
        .map(|t| {
            let mut row = query[t].clone();
            for c in comps {
                row.extend_from_slice(&c[t]);
            }
            row
        })
        .collect();
    let s: Mat = linear(store, &f.scorer, &joined).iter().map(|r| softmax(r)).collect();
    let z = (0..query.len())
        .map(|t| {
            (0..query[0].len())
                .map(|c| comps.iter().enumerate().map(|(k, m)| s[t][k] * m[t][c]).sum())
                .collect()
        })
        .collect();
    (z, s)
}

pub fn cross_attention(store: &ParamStore, mha: &MultiHeadAttention, norm: &Norm, x: &Mat, source: &Mat, key_mask: Option<&[f64]>) -> Mat {
    let q = linear(store, &mha.query, x);
    let k = linear(store, &mha.key, source);
    let v = linear(store, &mha.value, source);
    let mask = key_mask.map(|m| vec![m.to_vec(); x.len()]);
    let (att, _) = attention(&q, &k, &v, mha.heads, mask.as_ref());
    let out = linear(store, &mha.output, &att);
    layer_norm(store, norm, &add(x, &out))
}

/// Pointer weights over source positions, scatter-added into vocabulary
/// slots by explicit loops.
pub fn pointer(store: &ParamStore, p: &Pointer, source: &Mat, tokens: &[usize], pad: &[bool], decoded: &Mat, vocab: usize) -> Mat {
    let q = linear(store, &p.query, decoded);
    let k = linear(store, &p.key, source);
    let d = q[0].len() as f64;
    q.iter()
        .map(|qrow| {
            let logits: Vec<f64> = k
                .iter()
                .zip(pad)
                .map(|(krow, &masked)| {
                    let s: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() / d.sqrt();
                    if masked {
                        s + MASKED
                    } else {
                        s
                    }
                })
                .collect();
            let w = softmax(&logits);
            let mut out = vec![0.0; vocab];
            for (i, &t) in tokens.iter().enumerate() {
                out[t] += w[i];
            }
            out
        })
        .collect()
}

/// Unused-source placeholder for building decoder sources in tests.
pub fn no_mask(z: bist_core::Var) -> Source {
    Source { z, mask: None }
}

/// Adds uniform noise of half-width `scale` to every parameter.
pub fn perturb(store: &mut ParamStore, r: &mut ChaCha8Rng, scale: f64) {
    for p in store.iter_mut() {
        for x in p.value.data_mut() {
            *x += r.random_range(-scale..scale);
        }
    }
}
