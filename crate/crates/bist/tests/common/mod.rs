#![allow(dead_code)]

use std::path::Path;

use bist::cli::run_args;
use bist::Result;

/// Runs the CLI with `args` (no program name) and returns what it printed.
pub fn bist(args: &[&str]) -> Result<String> {
    let mut out = Vec::new();
    run_args(std::iter::once("bist").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8(out).expect("utf-8 output"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A small dialogue dataset: 2x2 grid, 16-wide features, no audio.
/// `changes` are flag/value pairs replacing those defaults.
pub fn tiny_dialogues(dir: &Path, changes: &[(&str, &str)]) {
    let mut flags = vec![
        ("--train", "6"),
        ("--val", "2"),
        ("--test", "2"),
        ("--turns", "2"),
        ("--frames", "2"),
        ("--positions", "2"),
        ("--d_vis", "16"),
        ("--audio", "false"),
        ("--objects", "1"),
    ];
    for (k, v) in changes {
        match flags.iter_mut().find(|(f, _)| f == k) {
            Some(slot) => slot.1 = v,
            None => flags.push((k, v)),
        }
    }
    let mut args = vec!["synthesize", "--out", s(dir)];
    args.extend(flags.iter().flat_map(|(k, v)| [*k, *v]));
    bist(&args).expect("synthesize");
}

/// Training flags for a model small enough to run in well under a second
/// per epoch.
pub fn tiny_model<'a>(data: &'a Path, out: &'a Path, epochs: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data_dir", s(data), "--out_dir", s(out), "--d", "8", "--d_att", "8", "--n_att", "1", "--n_dec",
        "1", "--h_att", "2", "--audio", "false", "--batch_size", "4", "--max_epochs", epochs, "--beam_size", "2",
        "--max_len", "8",
    ]
}
