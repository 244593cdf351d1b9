//! Training checkpoints.
//!
//! Little-endian binary: the magic `NSCK`, a `u32` version, a `u64` length
//! followed by the training config as JSON, the stage as `u8`, then `u64`
//! iteration and seed, a `u64` parameter count with that many `f64`, and the
//! optimizer state: `u64` range start and end, `u64` step, and the first and
//! second moments as `f64` over the range.

use std::fs;
use std::path::Path;

use nfseg_core::field::FieldParams;
use nfseg_core::optim::Adam;
use nfseg_core::train::{Stage, TrainConfig, TrainState};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

pub fn encode(config: &TrainConfig, state: &TrainState) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("config serializes");
    let p = state.params.as_slice();
    let opt = &state.optimizer;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * (p.len() + 2 * opt.m.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.push(state.stage.number());
    for v in [state.iteration, state.seed, p.len() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in p {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [opt.range.start as u64, opt.range.end as u64, opt.step] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in opt.m.iter().chain(&opt.v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, format!("implausible length {n}")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "bad magic, not a checkpoint"));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let json_len = c.len()?;
    let config: TrainConfig = serde_json::from_slice(c.take(json_len)?).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    config.validate()?;
    let stage = Stage::from_number(c.take(1)?[0])?;
    let iteration = c.u64()?;
    let seed = c.u64()?;
    let n = c.len()?;
    let params = FieldParams::from_flat(config.field, c.f64s(n)?)?;
    let (start, end) = (c.len()?, c.len()?);
    if start > end || end > params.len() {
        return Err(Error::format(path, format!("optimizer range {start}..{end} outside the parameters")));
    }
    let step = c.u64()?;
    let m = c.f64s(end - start)?;
    let v = c.f64s(end - start)?;
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    if params.as_slice().iter().chain(&m).chain(&v).any(|x| !x.is_finite()) {
        return Err(Error::format(path, "non-finite value in checkpoint"));
    }
    let state = TrainState {
        stage,
        iteration,
        params,
        optimizer: Adam {
            config: config.adam,
            range: start..end,
            m,
            v,
            step,
        },
        seed,
    };
    Ok(Checkpoint { config, state })
}

pub fn save(path: &Path, config: &TrainConfig, state: &TrainState) -> Result<()> {
    fs::write(path, encode(config, state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing {
            what: "checkpoint",
            path: path.into(),
            hint: "run `nfseg train --stage 1` first or pass --checkpoint",
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
