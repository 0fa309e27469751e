//! Deterministic synthetic video dialogues and QA sets with planted,
//! recoverable answers.
//!
//! A [`World`] fixes random codes for every clip index, spatial cell,
//! object and sound. A video's feature at `(f, p)` is the clip code plus the
//! cell code plus noise; each object in the video adds its prototype at one
//! clip and one cell. Questions name an object and ask where it is, when it
//! appears, or both, so the answer words (`cellP`, `clipF`) can only come
//! from the features.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DialogueRecord, FeatureSet, QaRecord, QaTaskKind, Turn, VideoFeatures};
use crate::error::{config, data, Result};
use crate::tensor::Tensor;
use crate::vocab::tokenize;

pub const OBJECTS: [&str; 12] = [
    "cat", "dog", "ball", "cup", "car", "bird", "book", "lamp", "shoe", "hat", "key", "box",
];
pub const SOUNDS: [&str; 4] = ["bark", "ring", "beep", "knock"];

/// Which questions a dialogue turn may ask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuestionMix {
    /// Where, when, where-and-when, and (with audio) sound questions.
    Mixed,
    /// Only where-and-when questions.
    WhereAndWhen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Seed of the shared codes; splits drawn from one world share them.
    pub world_seed: u64,
    pub frames: usize,
    pub positions: usize,
    pub d_vis: usize,
    pub d_aud: usize,
    pub objects_per_video: usize,
    pub audio: bool,
    pub mix: QuestionMix,
    /// Half-width of the uniform feature noise.
    pub noise: f64,
    /// Scale of a planted object or sound prototype.
    pub strength: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            world_seed: 7,
            frames: 4,
            positions: 4,
            d_vis: 64,
            d_aud: 64,
            objects_per_video: 2,
            audio: true,
            mix: QuestionMix::Mixed,
            noise: 0.1,
            strength: 2.0,
        }
    }
}

/// A planted object occurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub object: usize,
    pub frame: usize,
    pub cell: usize,
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: SynthConfig,
    clip_codes: Vec<Vec<f64>>,
    cell_codes: Vec<Vec<f64>>,
    object_codes: Vec<Vec<f64>>,
    audio_clip_codes: Vec<Vec<f64>>,
    sound_codes: Vec<Vec<f64>>,
}

fn code(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Values are stored at 32-bit precision so feature files round-trip
/// exactly.
fn f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

pub fn cell_word(p: usize) -> String {
    format!("cell{p}")
}

pub fn clip_word(f: usize) -> String {
    format!("clip{f}")
}

impl World {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        if cfg.frames == 0 || cfg.positions == 0 {
            return Err(config("frames and positions must be positive"));
        }
        if cfg.objects_per_video == 0
            || cfg.objects_per_video > cfg.frames.min(cfg.positions)
            || cfg.objects_per_video > OBJECTS.len()
        {
            return Err(config("objects per video must fit distinct clips and cells"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.world_seed);
        let d = cfg.d_vis;
        let clip_codes = (0..cfg.frames).map(|_| code(&mut rng, d)).collect();
        let cell_codes = (0..cfg.positions).map(|_| code(&mut rng, d)).collect();
        let object_codes = (0..OBJECTS.len()).map(|_| code(&mut rng, d)).collect();
        let audio_clip_codes = (0..cfg.frames).map(|_| code(&mut rng, cfg.d_aud)).collect();
        let sound_codes = (0..SOUNDS.len()).map(|_| code(&mut rng, cfg.d_aud)).collect();
        Ok(World {
            config: cfg,
            clip_codes,
            cell_codes,
            object_codes,
            audio_clip_codes,
            sound_codes,
        })
    }

    /// Draws distinct objects at distinct clips and cells.
    fn place(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<Placement> {
        let c = &self.config;
        let mut objects: Vec<usize> = (0..OBJECTS.len()).collect();
        let mut frames: Vec<usize> = (0..c.frames).collect();
        let mut cells: Vec<usize> = (0..c.positions).collect();
        objects.shuffle(rng);
        frames.shuffle(rng);
        cells.shuffle(rng);
        (0..count)
            .map(|i| Placement {
                object: objects[i],
                frame: frames[i],
                cell: cells[i],
            })
            .collect()
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = self.config.noise;
        if n > 0.0 {
            rng.random_range(-n..n)
        } else {
            0.0
        }
    }

    /// `[F, P, d_vis]` features with the given occurrences planted.
    pub fn render_video(&self, rng: &mut ChaCha8Rng, placements: &[Placement]) -> Result<Tensor> {
        let c = &self.config;
        let mut out = Vec::with_capacity(c.frames * c.positions * c.d_vis);
        for f in 0..c.frames {
            for p in 0..c.positions {
                for k in 0..c.d_vis {
                    let mut v = self.clip_codes[f][k] + self.cell_codes[p][k] + self.noise(rng);
                    for pl in placements.iter().filter(|pl| pl.frame == f && pl.cell == p) {
                        v += c.strength * self.object_codes[pl.object][k];
                    }
                    out.push(f32_precision(v));
                }
            }
        }
        Tensor::new(&[c.frames, c.positions, c.d_vis], out)
    }

    /// `[F, d_aud]` features with `sound` planted at clip `frame`.
    pub fn render_audio(&self, rng: &mut ChaCha8Rng, sound: usize, frame: usize) -> Result<Tensor> {
        let c = &self.config;
        let mut out = Vec::with_capacity(c.frames * c.d_aud);
        for f in 0..c.frames {
            for k in 0..c.d_aud {
                let mut v = self.audio_clip_codes[f][k] + self.noise(rng);
                if f == frame {
                    v += c.strength * self.sound_codes[sound][k];
                }
                out.push(f32_precision(v));
            }
        }
        Tensor::new(&[c.frames, c.d_aud], out)
    }

    /// `count` dialogues of `turns` turns each, drawn from `seed`.
    pub fn dialogues(&self, seed: u64, count: usize, turns: usize) -> Result<(Vec<DialogueRecord>, FeatureSet)> {
        if turns == 0 {
            return Err(config("dialogues need at least one turn"));
        }
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(count);
        let mut features = FeatureSet::new();
        for i in 0..count {
            let id = format!("syn{seed}_{i:04}");
            let placements = self.place(&mut rng, c.objects_per_video);
            let video = self.render_video(&mut rng, &placements)?;
            let (audio, sound) = if c.audio {
                let s = rng.random_range(0..SOUNDS.len());
                let f = rng.random_range(0..c.frames);
                (Some(self.render_audio(&mut rng, s, f)?), Some(s))
            } else {
                (None, None)
            };
            let names: Vec<&str> = placements.iter().map(|p| OBJECTS[p.object]).collect();
            let caption = format!("there is a {} .", names.join(" and a "));
            let mut dialogue_turns = Vec::with_capacity(turns);
            for _ in 0..turns {
                let kinds: &[usize] = match (c.mix, sound.is_some()) {
                    (QuestionMix::WhereAndWhen, _) => &[2],
                    (QuestionMix::Mixed, false) => &[0, 1, 2],
                    (QuestionMix::Mixed, true) => &[0, 1, 2, 3],
                };
                let kind = kinds[rng.random_range(0..kinds.len())];
                let pl = placements[rng.random_range(0..placements.len())];
                let x = OBJECTS[pl.object];
                let (question, answer) = match kind {
                    0 => (format!("where is the {x} ?"), format!("the {x} is in {}", cell_word(pl.cell))),
                    1 => (
                        format!("when does the {x} appear ?"),
                        format!("the {x} appears at {}", clip_word(pl.frame)),
                    ),
                    2 => (
                        format!("where and when is the {x} ?"),
                        format!("the {x} is in {} at {}", cell_word(pl.cell), clip_word(pl.frame)),
                    ),
                    _ => (
                        String::from("what sound is there ?"),
                        format!("a {} sound", SOUNDS[sound.unwrap_or(0)]),
                    ),
                };
                dialogue_turns.push(Turn {
                    question,
                    answer,
                    references: Vec::new(),
                });
            }
            records.push(DialogueRecord {
                video_id: id.clone(),
                caption,
                turns: dialogue_turns,
            });
            features.insert(id, VideoFeatures { video, audio });
        }
        Ok((records, features))
    }

    /// Cell and clip whose feature best matches the object's prototype.
    pub fn locate(&self, video: &Tensor, object: usize) -> (usize, usize) {
        let c = &self.config;
        let mut best = (0, 0, f64::NEG_INFINITY);
        for f in 0..c.frames {
            for p in 0..c.positions {
                let row = video.row(f * c.positions + p);
                let mut centred = Vec::with_capacity(c.d_vis);
                for k in 0..c.d_vis {
                    centred.push(row[k] - self.clip_codes[f][k] - self.cell_codes[p][k]);
                }
                let s = dot(&centred, &self.object_codes[object]);
                if s > best.2 {
                    best = (f, p, s);
                }
            }
        }
        (best.0, best.1)
    }

    fn sound_of(&self, audio: &Tensor) -> usize {
        let c = &self.config;
        let mut best = (0, f64::NEG_INFINITY);
        for f in 0..c.frames {
            let row = audio.row(f);
            let centred: Vec<f64> = (0..c.d_aud).map(|k| row[k] - self.audio_clip_codes[f][k]).collect();
            for (s, proto) in self.sound_codes.iter().enumerate() {
                let v = dot(&centred, proto);
                if v > best.1 {
                    best = (s, v);
                }
            }
        }
        best.0
    }

    /// Answers a generated question from the features alone.
    pub fn oracle_answer(&self, question: &str, features: &VideoFeatures) -> Result<String> {
        let toks = tokenize(question);
        if toks.first().map(String::as_str) == Some("what") && toks.get(1).map(String::as_str) == Some("sound") {
            let audio = features.audio.as_ref().ok_or_else(|| data("sound question without audio"))?;
            return Ok(format!("a {} sound", SOUNDS[self.sound_of(audio)]));
        }
        let object = toks
            .iter()
            .find_map(|t| OBJECTS.iter().position(|o| o == t))
            .ok_or_else(|| data(format!("no object named in {question:?}")))?;
        let x = OBJECTS[object];
        let (f, p) = self.locate(&features.video, object);
        match toks.first().map(String::as_str) {
            Some("where") if toks.get(1).map(String::as_str) == Some("and") => {
                Ok(format!("the {x} is in {} at {}", cell_word(p), clip_word(f)))
            }
            Some("where") => Ok(format!("the {x} is in {}", cell_word(p))),
            Some("when") => Ok(format!("the {x} appears at {}", clip_word(f))),
            _ => Err(data(format!("unrecognised question {question:?}"))),
        }
    }

    /// A QA set of `count` records of one task kind.
    pub fn qa(&self, seed: u64, count: usize, task: QaTaskKind, options: usize) -> Result<(Vec<QaRecord>, FeatureSet)> {
        let c = &self.config;
        if task == QaTaskKind::MultipleChoice && (options < 2 || options > c.frames * c.positions) {
            return Err(config("multiple choice needs between 2 and F·P options"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(count);
        let mut features = FeatureSet::new();
        for i in 0..count {
            let id = format!("qa{seed}_{i:04}");
            let (placements, record) = match task {
                QaTaskKind::MultipleChoice => {
                    let placements = self.place(&mut rng, c.objects_per_video);
                    let target = placements[rng.random_range(0..placements.len())];
                    let mut slots: Vec<(usize, usize)> = (0..c.frames)
                        .flat_map(|f| (0..c.positions).map(move |p| (f, p)))
                        .filter(|&s| s != (target.frame, target.cell))
                        .collect();
                    slots.shuffle(&mut rng);
                    let mut options_fp = alloc::vec![(target.frame, target.cell)];
                    options_fp.extend_from_slice(&slots[..options - 1]);
                    options_fp.shuffle(&mut rng);
                    let label = options_fp
                        .iter()
                        .position(|&s| s == (target.frame, target.cell))
                        .unwrap_or(0);
                    let candidates = options_fp
                        .iter()
                        .map(|&(f, p)| format!("{} at {}", cell_word(p), clip_word(f)))
                        .collect();
                    let question = format!("where and when is the {} ?", OBJECTS[target.object]);
                    (placements, (question, candidates, label, String::new()))
                }
                QaTaskKind::Count => {
                    let mut objects: Vec<usize> = (0..OBJECTS.len()).collect();
                    objects.shuffle(&mut rng);
                    let object = objects[0];
                    let times = rng.random_range(1..=c.frames);
                    let cell = rng.random_range(0..c.positions);
                    let mut frames: Vec<usize> = (0..c.frames).collect();
                    frames.shuffle(&mut rng);
                    let placements = frames[..times]
                        .iter()
                        .map(|&frame| Placement { object, frame, cell })
                        .collect();
                    let question = format!("how many times does the {} appear ?", OBJECTS[object]);
                    (placements, (question, Vec::new(), times, String::new()))
                }
                QaTaskKind::Frame => {
                    let placements = self.place(&mut rng, c.objects_per_video);
                    let target = placements[rng.random_range(0..placements.len())];
                    let question = format!("what is in {} at {} ?", cell_word(target.cell), clip_word(target.frame));
                    let answer = String::from(OBJECTS[target.object]);
                    (placements, (question, Vec::new(), 0, answer))
                }
            };
            let video = self.render_video(&mut rng, &placements)?;
            let (question, candidates, label, answer) = record;
            records.push(QaRecord {
                video_id: id.clone(),
                task,
                question,
                candidates,
                label,
                answer,
            });
            features.insert(id, VideoFeatures { video, audio: None });
        }
        Ok((records, features))
    }
}
