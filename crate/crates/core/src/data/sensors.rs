use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::FieldSnapshot;

/// Grid cells holding a sensor, in reading order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorLayout {
    pub positions: Vec<(usize, usize)>,
}

impl SensorLayout {
    pub fn new(positions: Vec<(usize, usize)>) -> Self {
        Self { positions }
    }

    /// Centred `rows × cols` lattice: row `i` sits at `⌊(2i+1)·H/(2·rows)⌋`,
    /// likewise for columns.
    pub fn uniform(height: usize, width: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > height || cols > width {
            return Err(Error::Config(format!(
                "a {rows}x{cols} sensor lattice does not fit a {height}x{width} grid"
            )));
        }
        let positions = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| ((2 * i + 1) * height / (2 * rows), (2 * j + 1) * width / (2 * cols))))
            .collect();
        Ok(Self { positions })
    }

    /// Square lattice with `n` sensors; `n` must be a perfect square.
    pub fn square(height: usize, width: usize, n: usize) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::Config(format!(
                "{n} sensors do not form a square lattice; supply a layout file"
            )));
        }
        Self::uniform(height, width, side, side)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Config("sensor layout is empty".into()));
        }
        let mut seen = HashSet::new();
        for &(r, c) in &self.positions {
            if r >= height || c >= width {
                return Err(Error::Config(format!(
                    "sensor at ({r}, {c}) lies outside the {height}x{width} grid"
                )));
            }
            if !seen.insert((r, c)) {
                return Err(Error::Config(format!("duplicate sensor at ({r}, {c})")));
            }
        }
        Ok(())
    }

    /// One `row,col` line per sensor.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (r, c) in &self.positions {
            let _ = writeln!(s, "{r},{c}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let positions = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|line| {
                let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<usize>().ok());
                let mut parts = line.split(',');
                match (parse(parts.next()), parse(parts.next()), parts.next()) {
                    (Some(r), Some(c), None) => Ok((r, c)),
                    _ => Err(Error::Config(format!("bad sensor line {line:?}, expected row,col"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { positions })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Exact grid lookups, `x[i] = field[positions[i]]`.
pub fn sample_sensors(snap: &FieldSnapshot, layout: &SensorLayout) -> Result<Tensor> {
    let (h, w) = match *snap.field.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("snapshot must be [H, W], got {s:?}"))),
    };
    layout.validate(h, w)?;
    let f = snap.field.data();
    Tensor::new(&[layout.len()], layout.positions.iter().map(|&(r, c)| f[r * w + c]).collect())
}
