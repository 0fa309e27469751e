//! Binary checkpoints (`BSTC`): configuration, fingerprint, vocabularies,
//! parameters and the full optimizer and training state. All numbers are
//! little-endian and floats are stored as exact `f64` bits.

use std::fs;
use std::path::Path;

use bist_core::optim::{Adam, AdamConfig};
use bist_core::train::{EpochRecord, TrainState};
use bist_core::{ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{io, Error, Result};

pub const MAGIC: [u8; 4] = *b"BSTC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub fingerprint: [u8; 32],
    pub vocab: Vec<String>,
    /// Frame-QA answer words; empty for other tasks.
    pub answers: Vec<String>,
    pub d_vis: usize,
    pub d_aud: usize,
    pub params: ParamStore,
    pub state: TrainState,
}

/// Hash over the structural configuration, feature widths and vocabularies.
pub fn fingerprint(config: &TrainConfig, d_vis: usize, d_aud: usize, vocab: &[String], answers: &[String]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(config.model_text().as_bytes());
    h.update(format!("d_vis = {d_vis}\nd_aud = {d_aud}\n").as_bytes());
    for (tag, list) in [("vocab", vocab), ("answers", answers)] {
        h.update(format!("{tag} {}\n", list.len()).as_bytes());
        for t in list {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn fingerprint_hex(&self) -> String {
        hex(&self.fingerprint)
    }

    /// Refuses to continue unless `expected` matches the stored fingerprint.
    pub fn check(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: hex(expected),
                found: self.fingerprint_hex(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc(Vec::new());
        e.0.extend_from_slice(&MAGIC);
        e.u32(VERSION);
        e.str(&self.config.to_text());
        e.0.extend_from_slice(&self.fingerprint);
        e.strs(&self.vocab);
        e.strs(&self.answers);
        e.u64(self.d_vis as u64);
        e.u64(self.d_aud as u64);
        e.u64(self.params.len() as u64);
        for (_, p) in self.params.iter() {
            e.str(&p.name);
            e.u32(p.value.dims().len() as u32);
            for &d in p.value.dims() {
                e.u64(d as u64);
            }
            e.u8(p.trainable as u8);
            e.f64s(p.value.data());
        }
        let a = &self.state.adam;
        e.f64(a.config.beta1);
        e.f64(a.config.beta2);
        e.f64(a.config.eps);
        e.u64(a.step);
        for buf in a.m.iter().chain(&a.v) {
            e.u64(buf.len() as u64);
            e.f64s(buf);
        }
        e.u64(self.state.epochs_done as u64);
        e.u64(self.state.history.len() as u64);
        for r in &self.state.history {
            e.u64(r.epoch as u64);
            e.f64(r.train_loss);
            e.opt_f64(r.val_loss);
            e.f64(r.lr);
        }
        e.opt_f64(self.state.best_loss);
        match &self.state.best_params {
            Some(best) => {
                e.u8(1);
                for (_, p) in best.iter() {
                    e.f64s(p.value.data());
                }
            }
            None => e.u8(0),
        }
        e.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint".into()));
        }
        let mut d = Dec { bytes, at: 4 };
        let version = d.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::parse_text(&d.str()?)?;
        let fingerprint: [u8; 32] = d.take(32)?.try_into().unwrap();
        let vocab = d.strs()?;
        let answers = d.strs()?;
        let d_vis = d.u64()? as usize;
        let d_aud = d.u64()? as usize;
        let n = d.u64()? as usize;
        let mut params = ParamStore::new();
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            let name = d.str()?;
            let rank = d.u32()? as usize;
            let dims = (0..rank).map(|_| d.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
            let trainable = d.u8()? != 0;
            let numel: usize = dims.iter().product();
            let t = Tensor::new(&dims, d.f64s(numel)?)?;
            let id = params.add(name, t);
            params.set_trainable(id, trainable);
            sizes.push(numel);
        }
        let config_adam = AdamConfig {
            beta1: d.f64()?,
            beta2: d.f64()?,
            eps: d.f64()?,
        };
        let step = d.u64()?;
        let mut moments = Vec::with_capacity(2 * n);
        for _ in 0..2 * n {
            let len = d.u64()? as usize;
            moments.push(d.f64s(len)?);
        }
        let v = moments.split_off(n);
        let adam = Adam {
            config: config_adam,
            step,
            m: moments,
            v,
        };
        let epochs_done = d.u64()? as usize;
        let h = d.u64()? as usize;
        let mut history = Vec::with_capacity(h);
        for _ in 0..h {
            history.push(EpochRecord {
                epoch: d.u64()? as usize,
                train_loss: d.f64()?,
                val_loss: d.opt_f64()?,
                lr: d.f64()?,
            });
        }
        let best_loss = d.opt_f64()?;
        let best_params = if d.u8()? == 1 {
            let mut best = params.clone();
            for (p, &numel) in best.iter_mut().zip(&sizes) {
                p.value.data_mut().copy_from_slice(&d.f64s(numel)?);
            }
            Some(best)
        } else {
            None
        };
        if d.at != bytes.len() {
            return Err(Error::Length(format!("{} trailing bytes in checkpoint", bytes.len() - d.at)));
        }
        Ok(Checkpoint {
            config,
            fingerprint,
            vocab,
            answers,
            d_vis,
            d_aud,
            params,
            state: TrainState {
                adam,
                epochs_done,
                history,
                best_loss,
                best_params,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never clobbers the old file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(io(&tmp))?;
        fs::rename(&tmp, path).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(io(path))?)
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    fn opt_f64(&mut self, x: Option<f64>) {
        self.u8(x.is_some() as u8);
        self.f64(x.unwrap_or(0.0));
    }
    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn strs(&mut self, list: &[String]) {
        self.u64(list.len() as u64);
        for s in list {
            self.str(s);
        }
    }
}

struct Dec<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Length(format!("checkpoint truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let some = self.u8()? != 0;
        let x = self.f64()?;
        Ok(some.then_some(x))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Length("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.str()).collect()
    }
}
