//! Argument parsing and dispatch for the `bist` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use bist_core::synth::{QuestionMix, SynthConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, Task, TrainConfig};
use crate::error::{io, Result};
use crate::run::{run_evaluate, run_generate, run_score_qa, run_train};
use crate::synthesize::{synthesize, SynthOptions};

#[derive(Debug, Parser)]
#[command(name = "bist", version, about = "Train and evaluate video-grounded dialogue and video QA models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes last.ckpt, best.ckpt and train_report.jsonl.
    Train {
        /// Flat key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Beam-decode a dialogue split and report BLEU, ROUGE-L and CIDEr.
    Evaluate(EvalArgs),
    /// Respond to the last turn of each dialogue in a JSONL file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// DialogueRecord lines; features are read from data_dir.
        #[arg(long)]
        dialogues: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a video QA split.
    ScoreQa(EvalArgs),
    /// Write a synthetic dataset.
    Synthesize(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum TaskArg {
    Dialogue,
    MultipleChoice,
    Count,
    Frame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MixArg {
    Mixed,
    WhereAndWhen,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "dialogue")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 7)]
    pub world_seed: u64,
    #[arg(long, default_value_t = 50)]
    pub train: usize,
    #[arg(long, default_value_t = 10)]
    pub val: usize,
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub turns: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub positions: usize,
    #[arg(long, default_value_t = 64)]
    pub d_vis: usize,
    #[arg(long, default_value_t = 64)]
    pub d_aud: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub audio: bool,
    #[arg(long, default_value_t = 2)]
    pub objects: usize,
    #[arg(long, value_enum, default_value = "mixed")]
    pub mix: MixArg,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub strength: f64,
    /// Candidates per multiple-choice question.
    #[arg(long, default_value_t = 5)]
    pub options: usize,
}

impl SynthArgs {
    pub fn options(&self) -> SynthOptions {
        use bist_core::data::QaTaskKind as K;
        SynthOptions {
            task: match self.task {
                TaskArg::Dialogue => Task::Dialogue,
                TaskArg::MultipleChoice => Task::Qa(K::MultipleChoice),
                TaskArg::Count => Task::Qa(K::Count),
                TaskArg::Frame => Task::Qa(K::Frame),
            },
            world: SynthConfig {
                world_seed: self.world_seed,
                frames: self.frames,
                positions: self.positions,
                d_vis: self.d_vis,
                d_aud: self.d_aud,
                objects_per_video: self.objects,
                audio: self.audio,
                mix: match self.mix {
                    MixArg::Mixed => QuestionMix::Mixed,
                    MixArg::WhereAndWhen => QuestionMix::WhereAndWhen,
                },
                noise: self.noise,
                strength: self.strength,
            },
            seed: self.seed,
            counts: [self.train, self.val, self.test],
            turns: self.turns,
            options: self.options,
        }
    }
}

/// Configuration from an optional file with flag overrides on top.
pub fn train_config(file: Option<&std::path::Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            overrides,
        } => {
            let cfg = train_config(config.as_deref(), &overrides)?;
            let s = run_train(&cfg, resume.as_deref(), out)?;
            writeln!(
                out,
                "fingerprint {}\nlast {}\nbest {}",
                s.fingerprint,
                s.last.display(),
                s.best.display()
            )
            .map_err(io("stdout"))?;
        }
        Command::Evaluate(a) => {
            run_evaluate(&a.checkpoint, &a.split, &a.overrides, out)?;
        }
        Command::Generate {
            checkpoint,
            dialogues,
            overrides,
        } => {
            run_generate(&checkpoint, &dialogues, &overrides, out)?;
        }
        Command::ScoreQa(a) => {
            run_score_qa(&a.checkpoint, &a.split, &a.overrides, out)?;
        }
        Command::Synthesize(a) => {
            let stats = synthesize(&a.out, &a.options())?;
            writeln!(out, "{:>6} {:>8} {:>8} {:>8}", "split", "dialogs", "turns", "words").map_err(io("stdout"))?;
            for (split, s) in stats {
                writeln!(out, "{split:>6} {:>8} {:>8} {:>8}", s.dialogs, s.turns, s.words).map_err(io("stdout"))?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| crate::Error::Config(e.to_string()))?;
    execute(cli, out)
}
