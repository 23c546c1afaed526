use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{write_archive, Dataset, FieldSnapshot};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

use super::eval::Reconstructor;

/// Files written for one exported step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedStep {
    pub step: usize,
    pub truth: PathBuf,
    pub reconstruction: PathBuf,
    pub error: PathBuf,
    pub scales: PathBuf,
    /// FFR1 archive with frames truth, reconstruction, |error|.
    pub frames: PathBuf,
}

/// Min-max scaling to 16 bits: `value = min + pixel·scale`.
struct Scaling {
    min: f64,
    max: f64,
    scale: f64,
}

fn scaling(v: &[f64]) -> Scaling {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { (max - min) / 65535.0 } else { 0.0 };
    Scaling { min, max, scale }
}

fn write_pgm16(path: &Path, width: usize, height: usize, v: &[f64], s: &Scaling) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &x in v {
        let px = if s.scale > 0.0 {
            ((x - s.min) / s.scale).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        buf.extend_from_slice(&px.to_be_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit binary graymap: `(width, height, pixels)`.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format(FormatError::Inconsistent(format!("{}: {msg}", path.display())));
    // Header: magic, width, height, maxval, each followed by one whitespace byte.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("not a 16-bit P5 graymap"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = buf.get(pos..).unwrap_or_default();
    if body.len() != 2 * w * h {
        return Err(bad("pixel payload size does not match header"));
    }
    let px = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, px))
}

/// Writes ground truth, reconstruction and absolute error for each step as
/// 16-bit graymaps, a scale sidecar, and the raw values as an FFR1 archive.
pub fn export_error_maps(
    recon: &dyn Reconstructor,
    data: &Dataset,
    steps: &[usize],
    out_dir: &Path,
) -> Result<Vec<ExportedStep>> {
    if let Some(&t) = steps.iter().find(|&&t| t >= data.len()) {
        return Err(Error::Config(format!("step {t} is outside the {}-step dataset", data.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pred = recon.reconstruct(data, steps)?;
    let (h, w, n) = (data.height, data.width, data.frame_len());
    let mut written = Vec::with_capacity(steps.len());
    for (i, &t) in steps.iter().enumerate() {
        let truth = data.frame(t);
        let est = &pred[i * n..][..n];
        let err: Vec<f64> = est.iter().zip(truth).map(|(p, y)| (p - y).abs()).collect();
        let stem = out_dir.join(format!("step{t:05}"));
        let path = |suffix: &str| PathBuf::from(format!("{}_{suffix}", stem.display()));
        let files = ExportedStep {
            step: t,
            truth: path("truth.pgm"),
            reconstruction: path("recon.pgm"),
            error: path("error.pgm"),
            scales: path("scale.txt"),
            frames: path("frames.ffr"),
        };
        let mut sidecar = String::from("# value = min + pixel * scale\n");
        for (label, values, file) in [
            ("truth", truth, &files.truth),
            ("recon", est, &files.reconstruction),
            ("error", err.as_slice(), &files.error),
        ] {
            let s = scaling(values);
            write_pgm16(file, w, h, values, &s)?;
            let _ = writeln!(
                sidecar,
                "{label} min={:e} max={:e} scale={:e} constant={}",
                s.min,
                s.max,
                s.scale,
                s.scale == 0.0
            );
        }
        std::fs::write(&files.scales, sidecar).map_err(|e| Error::io(&files.scales, e))?;
        let frames: Vec<FieldSnapshot> = [truth, est, err.as_slice()]
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                Ok(FieldSnapshot {
                    t_index: k,
                    field: Tensor::new(&[h, w], v.to_vec())?,
                })
            })
            .collect::<Result<_>>()?;
        write_archive(&frames, &files.frames)?;
        written.push(files);
    }
    Ok(written)
}
