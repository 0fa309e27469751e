//! Reverse-mode gradients against central finite differences, one
//! function per forward path returning the worst relative error over
//! all seeds.

use super::{build, perturb, rand_tensor, randomize, rng};
use bist_core::data::QaTaskKind;
use bist_core::decoder::{DecoderBlock, DecoderSources, Source};
use bist_core::encoders::EncodedText;
use bist_core::generator::{generation_loss, Generator};
use bist_core::layers;
use bist_core::model::{DialogueModel, ModelConfig, TurnInput};
use bist_core::reasoning::{DirectedReasoning, Direction, Fusion, ReasoningConfig, VideoPooling};
use bist_core::videoqa::{QaConfig, QaExample, QaModel, QaTarget};
use bist_core::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

/// Below this magnitude the central difference is dominated by rounding
/// (about `1e-16·|loss|/H`), so the error is measured against it instead.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compares analytic and numeric derivatives on `per_tensor` sampled
/// elements of every parameter and input. Returns the worst relative error.
pub fn gradcheck<F>(store: &ParamStore, inputs: &[Tensor], r: &mut ChaCha8Rng, per_tensor: usize, f: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Var,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (id, p) in store.iter() {
        let n = p.value.numel();
        for _ in 0..per_tensor.min(n) {
            let k = r.random_range(0..n);
            let analytic = grads.param(id).map_or(0.0, |gr| gr[k]);
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[k] += H;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[k] -= H;
            let numeric = (eval(&plus, inputs) - eval(&minus, inputs)) / (2.0 * H);
            let e = rel_err(analytic, numeric);
            assert!(e.is_finite(), "{}: non-finite error", p.name);
            worst = worst.max(e);
        }
    }
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        for _ in 0..per_tensor.min(n) {
            let k = r.random_range(0..n);
            let analytic = grads.wrt(vars[i]).map_or(0.0, |gr| gr[k]);
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            let numeric = (eval(store, &plus) - eval(store, &minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

/// Scalar `Σ out ⊙ w` with a fixed random `w`.
fn project(g: &mut Graph<'_>, out: Var, w: &Tensor) -> Var {
    let w = g.constant(w.clone());
    let m = g.mul(out, w).unwrap();
    g.sum(m)
}

fn cfg(d: usize, d_att: usize, heads: usize) -> ReasoningConfig {
    ReasoningConfig {
        d,
        d_att,
        heads,
        rounds: 1,
        t2s: true,
        s2t: true,
        audio: false,
        caption: false,
        pooling: VideoPooling::None,
    }
}

fn direction(direction: Direction) -> f64 {
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(1000 + seed);
        let (dir, mut store) = build(seed, |b| DirectedReasoning::new(b, direction, &cfg(4, 6, 2)).unwrap());
        randomize(&mut store, &mut r);
        let video = rand_tensor(&mut r, &[3, 2, 4], 1.0);
        let query = rand_tensor(&mut r, &[2, 4], 1.0);
        let w = rand_tensor(&mut r, &[2, 4], 1.0);
        let worst = gradcheck(&store, &[video, query], &mut r, 3, |g, v| {
            let out = dir.forward(g, v[0], v[1]).unwrap();
            project(g, out.z, &w)
        });
        all = all.max(worst);
    }
    all
}

pub fn temporal_to_spatial() -> f64 {
    direction(Direction::TemporalToSpatial)
}

pub fn spatial_to_temporal() -> f64 {
    direction(Direction::SpatialToTemporal)
}

pub fn fusion() -> f64 {
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(2000 + seed);
        let (fusion, mut store) = build(seed, |b| Fusion::new(b, 3, 3).unwrap());
        randomize(&mut store, &mut r);
        let inputs: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut r, &[2, 3], 1.0)).collect();
        let w = rand_tensor(&mut r, &[2, 3], 1.0);
        let worst = gradcheck(&store, &inputs, &mut r, 4, |g, v| {
            let (z, _) = fusion.forward(g, v[0], &v[1..]).unwrap();
            project(g, z, &w)
        });
        all = all.max(worst);
    }
    all
}

pub fn decoder_block() -> f64 {
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(3000 + seed);
        let (block, mut store) = build(seed, |b| DecoderBlock::new(b, 4, 2, 8).unwrap());
        perturb(&mut store, &mut r, 0.3);
        let inputs = vec![
            rand_tensor(&mut r, &[3, 4], 1.0),
            rand_tensor(&mut r, &[4, 4], 1.0),
            rand_tensor(&mut r, &[2, 4], 1.0),
            rand_tensor(&mut r, &[3, 4], 1.0),
        ];
        let w = rand_tensor(&mut r, &[3, 4], 1.0);
        let worst = gradcheck(&store, &inputs, &mut r, 2, |g, v| {
            let mask = layers::key_mask(g, &[false, true, false, false]).unwrap();
            let sources = DecoderSources {
                history: Source { z: v[1], mask },
                query: Source { z: v[2], mask: None },
                video: Source { z: v[3], mask: None },
            };
            let (out, _) = block.forward(g, v[0], &sources).unwrap();
            project(g, out, &w)
        });
        all = all.max(worst);
    }
    all
}

fn generator(caption: bool) -> f64 {
    let (vocab, d) = (8, 4);
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(4000 + seed + caption as u64 * 100);
        let (gen, mut store) = build(seed, |b| {
            let e = b.glorot("embedding", vocab, d).unwrap();
            Generator::new(b, e, vocab, d, caption).unwrap()
        });
        perturb(&mut store, &mut r, 0.3);
        let inputs = vec![
            rand_tensor(&mut r, &[3, d], 1.0),
            rand_tensor(&mut r, &[3, d], 1.0),
            rand_tensor(&mut r, &[3, d], 1.0),
            rand_tensor(&mut r, &[4, d], 1.0),
        ];
        let worst = gradcheck(&store, &inputs, &mut r, 3, |g, v| {
            let q = EncodedText {
                z: v[2],
                tokens: vec![4, 0, 5],
                pad_mask: vec![false, true, false],
            };
            let c = EncodedText {
                z: v[3],
                tokens: vec![6, 6, 7, 2],
                pad_mask: vec![false; 4],
            };
            let out = gen.forward(g, v[0], v[1], &q, caption.then_some(&c)).unwrap();
            generation_loss(g, out.p_out, &[4, 6, 3], 0.1).unwrap().0
        });
        all = all.max(worst);
    }
    all
}

pub fn query_pointer() -> f64 {
    generator(false)
}

pub fn caption_pointer() -> f64 {
    generator(true)
}

fn tiny_model(seed: u64) -> DialogueModel {
    let cfg = ModelConfig {
        vocab_size: 9,
        d: 4,
        d_att: 4,
        heads: 2,
        att_rounds: 2,
        dec_blocks: 1,
        d_vis: 5,
        d_aud: 5,
        video: true,
        audio: true,
        caption: true,
        t2s: true,
        s2t: true,
        pooling: VideoPooling::None,
    };
    DialogueModel::new(cfg, seed).unwrap()
}

pub fn generation_loss_through_the_model() -> f64 {
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(5000 + seed);
        let mut model = tiny_model(seed);
        perturb(&mut model.params, &mut r, 0.2);
        let video = rand_tensor(&mut r, &[2, 3, 5], 1.0);
        let audio = rand_tensor(&mut r, &[2, 5], 1.0);
        let input = TurnInput {
            history: &[2, 4, 5, 3],
            query: &[6, 7],
            caption: Some(&[8, 4]),
            video: &video,
            audio: Some(&audio),
        };
        let worst = gradcheck(&model.params, &[], &mut r, 1, |g, _| {
            model.net.loss(g, &input, &[2, 5, 6, 3], 0.1).unwrap().0
        });
        all = all.max(worst);
    }
    all
}

fn qa_config(task: QaTaskKind) -> QaConfig {
    QaConfig {
        task,
        vocab_size: 9,
        d: 4,
        d_att: 4,
        heads: 2,
        att_rounds: 1,
        dec_blocks: 1,
        d_vis: 5,
        t2s: true,
        s2t: true,
        pooling: VideoPooling::None,
        answers: 6,
        probe_per_candidate: false,
        candidates: 3,
        margin: 1.0,
    }
}

fn qa(task: QaTaskKind, target: impl Fn(&mut ChaCha8Rng) -> QaTarget) -> f64 {
    let mut all: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut r = rng(6000 + seed);
        let mut model = QaModel::new(qa_config(task), seed).unwrap();
        perturb(&mut model.params, &mut r, 0.2);
        let ex = QaExample {
            question: vec![4, 5, 6],
            target: target(&mut r),
            video: rand_tensor(&mut r, &[2, 2, 5], 1.0),
        };
        let worst = gradcheck(&model.params, &[], &mut r, 1, |g, _| model.net.loss(g, &ex).unwrap());
        all = all.max(worst);
    }
    all
}

pub fn hinge_loss() -> f64 {
    qa(QaTaskKind::MultipleChoice, |r| QaTarget::Choice {
        candidates: vec![vec![7, 8], vec![8], vec![3, 7, 7]],
        label: r.random_range(0..3),
    })
}

pub fn count_loss() -> f64 {
    qa(QaTaskKind::Count, |r| QaTarget::Count(r.random_range(0..5)))
}

pub fn frame_loss() -> f64 {
    qa(QaTaskKind::Frame, |r| QaTarget::Frame(r.random_range(0..6)))
}

/// Every checked path with its worst relative error over all seeds.
pub const PATHS: [(&str, fn() -> f64); 10] = [
    ("t2s", temporal_to_spatial),
    ("s2t", spatial_to_temporal),
    ("fusion", fusion),
    ("decoder block", decoder_block),
    ("query pointer", query_pointer),
    ("caption pointer", caption_pointer),
    ("generation loss", generation_loss_through_the_model),
    ("hinge loss", hinge_loss),
    ("count loss", count_loss),
    ("frame loss", frame_loss),
];
