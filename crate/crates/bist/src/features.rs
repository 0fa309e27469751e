//! Feature files: `BSTF` magic, then little-endian `u32` version, dtype and
//! rank, `u64` extents, and a row-major `f32` payload.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use bist_core::Tensor;

use crate::error::{io, Error, Result};

pub const MAGIC: [u8; 4] = *b"BSTF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let rank = t.dims().len();
    if !(2..=3).contains(&rank) {
        return Err(Error::Format(format!("feature tensors have rank 2 or 3, got {rank}")));
    }
    let mut out = Vec::with_capacity(16 + 8 * rank + 4 * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(rank as u32).to_le_bytes());
    for &e in t.dims() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Length(format!("header truncated at byte {at}")))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a feature file".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let dtype = u32_at(bytes, 8)?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let rank = u32_at(bytes, 12)? as usize;
    if !(2..=3).contains(&rank) {
        return Err(Error::Format(format!("feature rank must be 2 or 3, got {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 16 + 8 * i;
        let b = bytes
            .get(at..at + 8)
            .ok_or_else(|| Error::Length("extents truncated".into()))?;
        dims.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
    }
    let start = 16 + 8 * rank;
    let numel = dims
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .ok_or_else(|| Error::Format("extents overflow".into()))?;
    let payload = &bytes[start..];
    if payload.len() != 4 * numel {
        return Err(Error::Length(format!(
            "payload has {} bytes, extents {dims:?} need {}",
            payload.len(),
            4 * numel
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::new(&dims, data)?)
}

pub fn write_feature_file(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode(t)?;
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(&bytes).map_err(io(path))?;
    w.flush().map_err(io(path))
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    decode(&fs::read(path).map_err(io(path))?)
}
