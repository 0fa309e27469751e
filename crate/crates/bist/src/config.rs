//! Flat `key = value` training configuration. Every key is also a long
//! command-line flag of the same name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bist_core::data::QaTaskKind;
use bist_core::reasoning::VideoPooling;

use crate::error::{io, Error, Result};

/// Key, default value, help text.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("task", "dialogue", "dialogue, multiple_choice, count or frame"),
    ("d", "128", "model width"),
    ("d_att", "128", "attention projection width in the reasoning stages"),
    ("n_att", "3", "reasoning rounds"),
    ("n_dec", "3", "decoder blocks"),
    ("h_att", "8", "attention heads"),
    ("video", "true", "use visual features"),
    ("audio", "true", "use audio features"),
    ("caption", "true", "use the caption"),
    ("t2s", "true", "temporal-to-spatial reasoning"),
    ("s2t", "true", "spatial-to-temporal reasoning"),
    ("pooling", "none", "none, t-only (pool space) or s-only (pool time)"),
    ("probe_per_candidate", "false", "one QA probe per candidate slot"),
    ("margin", "1", "hinge margin of the multiple-choice head"),
    ("label_smoothing", "0.1", "label smoothing of the generation loss"),
    ("beam_size", "5", "beam width for decoding"),
    ("max_len", "20", "maximum generated response length"),
    ("warmup_epochs", "5", "warm-up length in epochs"),
    ("max_epochs", "50", "training epochs"),
    ("batch_size", "8", "examples per update"),
    ("lr_scale", "1", "multiplier on the scheduled learning rate"),
    ("seed", "0", "initialization and shuffling seed"),
    ("min_count", "1", "minimum token count for the vocabulary"),
    ("aux_autoencoder_loss", "false", "auxiliary auto-encoder loss (not implemented)"),
    ("data_dir", "data", "dataset directory"),
    ("out_dir", "runs/default", "directory for checkpoints and reports"),
];

/// Keys that change the model's structure; they enter the checkpoint
/// fingerprint.
pub const MODEL_KEYS: &[&str] = &[
    "task",
    "d",
    "d_att",
    "n_att",
    "n_dec",
    "h_att",
    "video",
    "audio",
    "caption",
    "t2s",
    "s2t",
    "pooling",
    "probe_per_candidate",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Dialogue,
    Qa(QaTaskKind),
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Dialogue => "dialogue",
            Task::Qa(QaTaskKind::MultipleChoice) => "multiple_choice",
            Task::Qa(QaTaskKind::Count) => "count",
            Task::Qa(QaTaskKind::Frame) => "frame",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub d: usize,
    pub d_att: usize,
    pub n_att: usize,
    pub n_dec: usize,
    pub h_att: usize,
    pub video: bool,
    pub audio: bool,
    pub caption: bool,
    pub t2s: bool,
    pub s2t: bool,
    pub pooling: VideoPooling,
    pub probe_per_candidate: bool,
    pub margin: f64,
    pub label_smoothing: f64,
    pub beam_size: usize,
    pub max_len: usize,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr_scale: f64,
    pub seed: u64,
    pub min_count: usize,
    pub aux_autoencoder_loss: bool,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

pub fn pooling_name(p: VideoPooling) -> &'static str {
    match p {
        VideoPooling::None => "none",
        VideoPooling::TemporalOnly => "t-only",
        VideoPooling::SpatialOnly => "s-only",
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut c = TrainConfig {
            task: Task::Dialogue,
            d: 0,
            d_att: 0,
            n_att: 0,
            n_dec: 0,
            h_att: 0,
            video: false,
            audio: false,
            caption: false,
            t2s: false,
            s2t: false,
            pooling: VideoPooling::None,
            probe_per_candidate: false,
            margin: 0.0,
            label_smoothing: 0.0,
            beam_size: 0,
            max_len: 0,
            warmup_epochs: 0,
            max_epochs: 0,
            batch_size: 0,
            lr_scale: 0.0,
            seed: 0,
            min_count: 0,
            aux_autoencoder_loss: false,
            data_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("defaults parse");
        }
        c
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => {
                self.task = match v {
                    "dialogue" => Task::Dialogue,
                    "multiple_choice" => Task::Qa(QaTaskKind::MultipleChoice),
                    "count" => Task::Qa(QaTaskKind::Count),
                    "frame" => Task::Qa(QaTaskKind::Frame),
                    _ => return Err(Error::Config(format!("unknown task {v:?}"))),
                }
            }
            "d" => self.d = parse(key, v)?,
            "d_att" => self.d_att = parse(key, v)?,
            "n_att" => self.n_att = parse(key, v)?,
            "n_dec" => self.n_dec = parse(key, v)?,
            "h_att" => self.h_att = parse(key, v)?,
            "video" => self.video = parse_bool(key, v)?,
            "audio" => self.audio = parse_bool(key, v)?,
            "caption" => self.caption = parse_bool(key, v)?,
            "t2s" => self.t2s = parse_bool(key, v)?,
            "s2t" => self.s2t = parse_bool(key, v)?,
            "pooling" => {
                self.pooling = match v {
                    "none" => VideoPooling::None,
                    "t-only" => VideoPooling::TemporalOnly,
                    "s-only" => VideoPooling::SpatialOnly,
                    _ => return Err(Error::Config(format!("unknown pooling {v:?}"))),
                }
            }
            "probe_per_candidate" => self.probe_per_candidate = parse_bool(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "label_smoothing" => self.label_smoothing = parse(key, v)?,
            "beam_size" => self.beam_size = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_scale" => self.lr_scale = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "aux_autoencoder_loss" => self.aux_autoencoder_loss = parse_bool(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.name().to_string(),
            "d" => self.d.to_string(),
            "d_att" => self.d_att.to_string(),
            "n_att" => self.n_att.to_string(),
            "n_dec" => self.n_dec.to_string(),
            "h_att" => self.h_att.to_string(),
            "video" => self.video.to_string(),
            "audio" => self.audio.to_string(),
            "caption" => self.caption.to_string(),
            "t2s" => self.t2s.to_string(),
            "s2t" => self.s2t.to_string(),
            "pooling" => pooling_name(self.pooling).to_string(),
            "probe_per_candidate" => self.probe_per_candidate.to_string(),
            "margin" => self.margin.to_string(),
            "label_smoothing" => self.label_smoothing.to_string(),
            "beam_size" => self.beam_size.to_string(),
            "max_len" => self.max_len.to_string(),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_scale" => self.lr_scale.to_string(),
            "seed" => self.seed.to_string(),
            "min_count" => self.min_count.to_string(),
            "aux_autoencoder_loss" => self.aux_autoencoder_loss.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path).map_err(io(path))?)
    }

    /// Every key in table order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, _) in KEYS {
            writeln!(s, "{k} = {}", self.get(k).unwrap()).unwrap();
        }
        s
    }

    /// Only the structural keys, in table order.
    pub fn model_text(&self) -> String {
        let mut s = String::new();
        for k in MODEL_KEYS {
            writeln!(s, "{k} = {}", self.get(k).unwrap()).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.aux_autoencoder_loss {
            return Err(Error::Config("the auxiliary auto-encoder loss is not implemented".into()));
        }
        if self.h_att == 0 || self.d % self.h_att != 0 {
            return Err(Error::Config(format!("d={} is not divisible by h_att={}", self.d, self.h_att)));
        }
        if self.n_att == 0 || self.n_dec == 0 {
            return Err(Error::Config("n_att and n_dec must be positive".into()));
        }
        if self.beam_size == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("beam_size, max_len and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        if let Task::Qa(_) = self.task {
            if !self.video {
                return Err(Error::Config("video QA needs visual features".into()));
            }
        } else if !(self.video || self.audio || self.caption) {
            return Err(Error::Config("at least one of video, audio, caption must be enabled".into()));
        }
        Ok(())
    }
}

/// Command-line overrides, one optional long flag per configuration key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides(pub Vec<(String, String)>);

impl Overrides {
    pub fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        for (k, v) in &self.0 {
            config.set(k, v)?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.iter().any(|(k, _)| k == key)
    }
}

impl clap::FromArgMatches for Overrides {
    fn from_arg_matches(m: &clap::ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut out = Overrides::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &clap::ArgMatches) -> std::result::Result<(), clap::Error> {
        for (k, _, _) in KEYS {
            if let Some(v) = m.get_one::<String>(k) {
                self.0.retain(|(x, _)| x != k);
                self.0.push((k.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl clap::Args for Overrides {
    fn augment_args(mut cmd: clap::Command) -> clap::Command {
        for (k, default, help) in KEYS {
            cmd = cmd.arg(
                clap::Arg::new(*k)
                    .long(*k)
                    .value_name("VALUE")
                    .help(format!("{help} [config default: {default}]"))
                    .help_heading("Configuration"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}
