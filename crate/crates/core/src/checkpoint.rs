//! Binary checkpoints of a training state.
//!
//! Layout (little-endian): magic `BITCKPT\0`, format version `u32`, then a body of
//! length-prefixed sections: model config JSON, config digest, step, seed, RNG state
//! (32-byte key, stream, word position), parameters, first and second optimizer
//! moments, optimizer step. A SHA-256 of the body closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::BitConfig;
use crate::numcore::{Array, OptState, Param, ParamStore};
use crate::pretrain::TrainState;

pub const MAGIC: &[u8; 8] = b"BITCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn array(&mut self, a: &Array) {
        self.u8(DTYPE_F64);
        self.u32(a.shape().len() as u32);
        for &d in a.shape() {
            self.u64(d as u64);
        }
        for &v in a.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn arrays<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a String, &'a Array)>) {
        self.u64(items.len() as u64);
        for (name, a) in items {
            self.bytes(name.as_bytes());
            self.array(a);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }
    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.len()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
    fn array(&mut self) -> Result<Array, CheckpointError> {
        if self.u8()? != DTYPE_F64 {
            return Err(CheckpointError::Corrupt("unsupported dtype".into()));
        }
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let raw = self.take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Array::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn arrays(&mut self) -> Result<BTreeMap<String, Array>, CheckpointError> {
        let n = self.u64()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let name = self.string()?;
            out.insert(name, self.array()?);
        }
        Ok(out)
    }
}

/// Serializes a training state.
pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    let model = serde_json::to_vec(&state.model).expect("config serializes");
    w.bytes(&model);
    w.bytes(state.config_digest.as_bytes());
    w.u64(state.step);
    w.u64(state.seed);
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.u128(state.rng.get_word_pos());
    w.u64(state.params.len() as u64);
    for (name, p) in state.params.iter() {
        w.bytes(name.as_bytes());
        w.u8(p.trainable as u8);
        w.array(&p.value);
    }
    w.arrays(state.opt.m.iter());
    w.arrays(state.opt.v.iter());
    w.u64(state.opt.step);
    let body = w.0;
    let mut out = Vec::with_capacity(body.len() + 44);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&Sha256::digest(&body));
    out
}

/// Parses a checkpoint; any defect yields an error and no partial state.
pub fn from_bytes(bytes: &[u8]) -> Result<TrainState, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes.get(8..12).ok_or(CheckpointError::Truncated)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 12 + 32 {
        return Err(CheckpointError::Truncated);
    }
    let (body, sum) = bytes[12..].split_at(bytes.len() - 12 - 32);
    let mut r = Reader { buf: body, pos: 0 };
    let model: BitConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| CheckpointError::Corrupt(format!("model config: {e}")))?;
    let config_digest = r.string()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let n = r.u64()?;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.string()?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(CheckpointError::Corrupt(format!("trainable flag {other}"))),
        };
        params.insert_param(name, Param { value: r.array()?, trainable });
    }
    let m = r.arrays()?;
    let v = r.arrays()?;
    let opt_step = r.u64()?;
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(CheckpointError::Checksum);
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState { model, params, opt: OptState { m, v, step: opt_step }, step, seed, rng, config_digest })
}

pub fn save(path: impl AsRef<Path>, state: &TrainState) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, to_bytes(state))?)
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainState, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
