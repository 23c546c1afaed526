//! `FFR1` field archives.
//!
//! ```text
//! "FFR1" | u16 version | u32 H | u32 W | u32 S | S × H·W f64 (row-major)
//! ```
//! All little-endian.

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

use super::FieldSnapshot;

pub const MAGIC: [u8; 4] = *b"FFR1";
pub const VERSION: u16 = 1;
/// Bytes before the first frame.
pub const HEADER_LEN: usize = 4 + 2 + 3 * 4;

pub fn encode_archive(snaps: &[FieldSnapshot]) -> Result<Vec<u8>> {
    let (h, w) = match snaps.first().map(|s| s.field.shape()) {
        Some(&[h, w]) => (h, w),
        Some(s) => return Err(Error::Shape(format!("snapshots must be [H, W], got {s:?}"))),
        None => (0, 0),
    };
    let mut out = ByteWriter::new();
    out.bytes(&MAGIC);
    out.u16(VERSION);
    out.u32(h as u32);
    out.u32(w as u32);
    out.u32(snaps.len() as u32);
    for s in snaps {
        if s.field.shape() != [h, w] {
            return Err(Error::Shape(format!(
                "snapshot {} has shape {:?}, archive holds [{h}, {w}]",
                s.t_index,
                s.field.shape()
            )));
        }
        out.f64s(s.field.data());
    }
    Ok(out.finish())
}

pub fn decode_archive(buf: &[u8]) -> Result<Vec<FieldSnapshot>> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let s = r.u32()? as usize;
    let frame = h.checked_mul(w).ok_or_else(|| FormatError::Inconsistent(format!("{h}x{w} frame overflows")))?;
    let need = frame.checked_mul(s).and_then(|n| n.checked_mul(8));
    match need {
        Some(n) if n > r.remaining() => {
            return Err(FormatError::Truncated {
                offset: r.position(),
                needed: n,
                available: r.remaining(),
            }
            .into())
        }
        Some(n) if n < r.remaining() => {
            return Err(FormatError::Inconsistent(format!(
                "header describes {s} frames of {h}x{w} ({n} bytes) but {} payload bytes follow",
                r.remaining()
            ))
            .into())
        }
        Some(_) => {}
        None => return Err(FormatError::Inconsistent("archive size overflows".into()).into()),
    }
    let mut snaps = Vec::with_capacity(s);
    for t in 0..s {
        let data = r.f64s(frame)?;
        snaps.push(FieldSnapshot {
            t_index: t,
            field: Tensor::new(&[h, w], data)?,
        });
    }
    r.finish()?;
    Ok(snaps)
}

pub fn write_archive(snaps: &[FieldSnapshot], path: &Path) -> Result<()> {
    let bytes = encode_archive(snaps)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<FieldSnapshot>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&buf)
}
