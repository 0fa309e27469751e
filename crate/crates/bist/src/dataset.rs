//! Dataset directories: `{train,val,test}.jsonl` with one record per line
//! and `features/<video_id>.vis.bstf` / `.aud.bstf` feature files.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use bist_core::data::{DialogueRecord, FeatureSet, QaRecord, VideoFeatures};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io, Error, Result};
use crate::features::{read_feature_file, write_feature_file};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn video_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("features").join(format!("{id}.vis.bstf"))
}

pub fn audio_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("features").join(format!("{id}.aud.bstf"))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Records of one split; a missing split file is a data error.
pub fn read_split<T: DeserializeOwned>(dir: &Path, split: &str) -> Result<Vec<T>> {
    let path = split_path(dir, split);
    if !path.is_file() {
        return Err(Error::Data(format!("split {split:?} not found at {}", path.display())));
    }
    read_jsonl(&path)
}

pub fn has_split(dir: &Path, split: &str) -> bool {
    split_path(dir, split).is_file()
}

/// Loads features for the given videos. Audio files are optional.
pub fn load_features<'a>(dir: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<FeatureSet> {
    let mut out = FeatureSet::new();
    let ids: BTreeSet<&str> = ids.into_iter().collect();
    for id in ids {
        let vp = video_path(dir, id);
        if !vp.is_file() {
            return Err(Error::Data(format!("missing visual features {}", vp.display())));
        }
        let video = read_feature_file(&vp)?;
        if video.dims().len() != 3 {
            return Err(Error::Data(format!("{}: visual features must be [F, P, d]", vp.display())));
        }
        let ap = audio_path(dir, id);
        let audio = if ap.is_file() {
            let a = read_feature_file(&ap)?;
            if a.dims().len() != 2 {
                return Err(Error::Data(format!("{}: audio features must be [F, d]", ap.display())));
            }
            Some(a)
        } else {
            None
        };
        out.insert(id.to_string(), VideoFeatures { video, audio });
    }
    Ok(out)
}

pub fn write_features(dir: &Path, features: &FeatureSet) -> Result<()> {
    let fdir = dir.join("features");
    fs::create_dir_all(&fdir).map_err(io(&fdir))?;
    for (id, f) in features {
        write_feature_file(&video_path(dir, id), &f.video)?;
        if let Some(a) = &f.audio {
            write_feature_file(&audio_path(dir, id), a)?;
        }
    }
    Ok(())
}

pub fn dialogue_split(dir: &Path, split: &str) -> Result<(Vec<DialogueRecord>, FeatureSet)> {
    let records: Vec<DialogueRecord> = read_split(dir, split)?;
    for r in &records {
        r.validate()?;
    }
    let features = load_features(dir, records.iter().map(|r| r.video_id.as_str()))?;
    Ok((records, features))
}

pub fn qa_split(dir: &Path, split: &str) -> Result<(Vec<QaRecord>, FeatureSet)> {
    let records: Vec<QaRecord> = read_split(dir, split)?;
    let features = load_features(dir, records.iter().map(|r| r.video_id.as_str()))?;
    Ok((records, features))
}

/// Widths `(d_vis, d_aud)` of a feature set; `d_aud` is 0 without audio.
/// Every video must agree.
pub fn feature_widths(features: &FeatureSet) -> Result<(usize, usize, bool)> {
    let mut widths: Option<(usize, usize, bool)> = None;
    for (id, f) in features {
        let w = (
            f.video.dims()[2],
            f.audio.as_ref().map_or(0, |a| a.dims()[1]),
            f.audio.is_some(),
        );
        match widths {
            None => widths = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::Data(format!("video {id} has feature widths {w:?}, expected {prev:?}")))
            }
            _ => {}
        }
    }
    widths.ok_or_else(|| Error::Data("no features loaded".into()))
}
