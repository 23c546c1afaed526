//! `FRMB` checkpoint files.
//!
//! ```text
//! "FRMB" | u16 version
//! u32 len | config as key=value lines (UTF-8)
//! u32 count | count × tensor                       parameters
//! u64 step
//! u32 count | count × tensor                       first moments
//! u32 count | count × tensor                       second moments
//! [u8; 32] seed | u64 stream | u128 word position  RNG
//!
//! tensor = u32 len | name (UTF-8) | u32 rank | rank × u64 extent | f64 payload
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::ModelConfig;

pub const MAGIC: [u8; 4] = *b"FRMB";
pub const VERSION: u16 = 1;

/// Adam state aligned with the parameter order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: OptimizerState,
    pub rng: RngState,
}

fn write_tensor(w: &mut ByteWriter, name: &str, t: &Tensor) {
    w.str(name);
    w.u32(t.rank() as u32);
    for &e in t.shape() {
        w.u64(e as u64);
    }
    w.f64s(t.data());
}

fn read_tensor(r: &mut ByteReader<'_>) -> Result<(String, Tensor)> {
    let name = r.str()?.to_string();
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        let e = r.u64()?;
        shape.push(usize::try_from(e).map_err(|_| {
            FormatError::Inconsistent(format!("tensor {name:?}: extent {e} too large"))
        })?);
    }
    let count = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(|| {
        FormatError::Inconsistent(format!("tensor {name:?}: element count overflows"))
    })?;
    let data = r.f64s(count)?;
    let t = Tensor::new(&shape, data)?;
    Ok((name, t))
}

fn write_moments(w: &mut ByteWriter, names: &[(String, Tensor)], moments: &[Tensor]) {
    w.u32(moments.len() as u32);
    for (i, t) in moments.iter().enumerate() {
        let name = names.get(i).map(|(n, _)| n.as_str()).unwrap_or("");
        write_tensor(w, name, t);
    }
}

fn read_tensors(r: &mut ByteReader<'_>) -> Result<Vec<(String, Tensor)>> {
    let n = r.u32()? as usize;
    (0..n).map(|_| read_tensor(r)).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&MAGIC);
        w.u16(VERSION);
        w.str(&self.config.to_text());
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            write_tensor(&mut w, name, t);
        }
        w.u64(self.optimizer.step);
        write_moments(&mut w, &self.params, &self.optimizer.m);
        write_moments(&mut w, &self.params, &self.optimizer.v);
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let config = ModelConfig::from_text(r.str()?).map_err(|e| match e {
            Error::Config(msg) => Error::Format(FormatError::Inconsistent(format!("config block: {msg}"))),
            other => other,
        })?;
        let params = read_tensors(&mut r)?;
        let step = r.u64()?;
        let m: Vec<Tensor> = read_tensors(&mut r)?.into_iter().map(|(_, t)| t).collect();
        let v: Vec<Tensor> = read_tensors(&mut r)?.into_iter().map(|(_, t)| t).collect();
        for moments in [&m, &v] {
            if !moments.is_empty() && moments.len() != params.len() {
                return Err(FormatError::Inconsistent(format!(
                    "{} moment tensors for {} parameters",
                    moments.len(),
                    params.len()
                ))
                .into());
            }
        }
        let rng = RngState {
            seed: r.seed()?,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        r.finish()?;
        Ok(Self {
            config,
            params,
            optimizer: OptimizerState { step, m, v },
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
