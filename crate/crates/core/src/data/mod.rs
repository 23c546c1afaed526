//! Synthetic vortex-street fields, sparse sensor sampling, train/test splits
//! and the `FFR1` field archive.

mod archive;
mod config;
mod sensors;

pub use archive::{decode_archive, encode_archive, read_archive, write_archive, HEADER_LEN};
pub use config::DataConfig;
pub use sensors::{sample_sensors, SensorLayout};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

/// Row offset between the two vortex rows as a fraction of the streamwise
/// spacing (von Kármán's stability ratio).
pub const KARMAN_RATIO: f64 = 0.281;

#[derive(Clone, Debug, PartialEq)]
pub struct VortexStreetConfig {
    pub height: usize,
    pub width: usize,
    /// Vortex pairs per period of the street.
    pub n_pairs: usize,
    /// Advection speed in cells per step.
    pub u_adv: f64,
    /// Gaussian core radius in cells.
    pub sigma: f64,
    pub amplitude: f64,
    /// Streamwise distance between same-sign vortices, in cells.
    pub spacing: f64,
    pub steps: usize,
    /// Seeds the optional sensor noise; the field itself is closed form.
    pub seed: u64,
}

impl Default for VortexStreetConfig {
    fn default() -> Self {
        Self {
            height: 24,
            width: 32,
            n_pairs: 2,
            u_adv: 0.37,
            sigma: 2.0,
            amplitude: 1.0,
            spacing: 16.0,
            steps: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Vortex {
    row: f64,
    col: f64,
    sign: f64,
}

impl VortexStreetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 || self.steps == 0 || self.n_pairs == 0 {
            return bad("grid extents, step count and vortex pairs must be positive".into());
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.u_adv > 0.0) {
            return bad(format!("advection speed must be positive, got {}", self.u_adv));
        }
        if !(self.spacing > 2.0 * self.sigma) {
            return bad(format!(
                "spacing {} must exceed twice the core radius {}",
                self.spacing, self.sigma
            ));
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        Ok(())
    }

    fn vortices(&self) -> Vec<Vortex> {
        let centre = self.height as f64 / 2.0;
        let offset = KARMAN_RATIO * self.spacing / 2.0;
        (0..2 * self.n_pairs)
            .map(|k| {
                let upper = k % 2 == 0;
                Vortex {
                    row: if upper { centre - offset } else { centre + offset },
                    col: k as f64 * self.spacing / 2.0,
                    sign: if upper { 1.0 } else { -1.0 },
                }
            })
            .collect()
    }

    /// Vorticity at grid cell `(r, c)` and time `t`.
    pub fn vorticity(&self, r: f64, c: f64, t: f64) -> f64 {
        vorticity_at(&self.vortices(), self, r, c, t)
    }
}

/// Signed column distance wrapped into `[-W/2, W/2)`.
fn wrapped(dc: f64, w: f64) -> f64 {
    let d = dc.rem_euclid(w);
    if d >= w / 2.0 {
        d - w
    } else {
        d
    }
}

fn vorticity_at(vortices: &[Vortex], cfg: &VortexStreetConfig, r: f64, c: f64, t: f64) -> f64 {
    let w = cfg.width as f64;
    let two_s2 = 2.0 * cfg.sigma * cfg.sigma;
    vortices
        .iter()
        .map(|v| {
            let dc = wrapped(c - v.col - cfg.u_adv * t, w);
            let dr = r - v.row;
            v.sign * cfg.amplitude * (-(dc * dc + dr * dr) / two_s2).exp()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub t_index: usize,
    /// `[H, W]`
    pub field: Tensor,
}

pub fn generate_vortex_street(cfg: &VortexStreetConfig) -> Result<Vec<FieldSnapshot>> {
    cfg.validate()?;
    let vortices = cfg.vortices();
    let (h, w) = (cfg.height, cfg.width);
    Ok((0..cfg.steps)
        .map(|t| {
            let field = Tensor::from_fn(&[h, w], |i| {
                vorticity_at(&vortices, cfg, (i / w) as f64, (i % w) as f64, t as f64)
            });
            FieldSnapshot { t_index: t, field }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
    /// Five equal consecutive parts of `test`, named T1..T5.
    pub intervals: Vec<Range<usize>>,
}

pub const N_INTERVALS: usize = 5;

/// Leading `train : test` split of `total` steps, e.g. `(4, 1)`.
pub fn make_split(total: usize, ratio: (usize, usize)) -> Result<DatasetSplit> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::Config(format!("split ratio {a}:{b} must have positive parts")));
    }
    let n_train = total * a / (a + b);
    let n_test = total - n_train;
    if n_train == 0 || n_test < N_INTERVALS || n_test % N_INTERVALS != 0 {
        return Err(Error::Config(format!(
            "{total} steps at {a}:{b} give {n_train} train / {n_test} test; the test part must be a positive multiple of {N_INTERVALS}"
        )));
    }
    let part = n_test / N_INTERVALS;
    let intervals = (0..N_INTERVALS)
        .map(|i| n_train + i * part..n_train + (i + 1) * part)
        .collect();
    Ok(DatasetSplit {
        train: 0..n_train,
        test: n_train..total,
        intervals,
    })
}

/// Optional Gaussian sensor noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorNoise {
    pub std: f64,
    pub seed: u64,
}

/// Fields and their sensor readings, stored contiguously by time.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub layout: SensorLayout,
    frames: Vec<f64>,
    sensors: Vec<f64>,
}

impl Dataset {
    pub fn new(snaps: &[FieldSnapshot], layout: SensorLayout, noise: Option<SensorNoise>) -> Result<Self> {
        let first = snaps
            .first()
            .ok_or_else(|| Error::Config("dataset needs at least one snapshot".into()))?;
        let (height, width) = match *first.field.shape() {
            [h, w] => (h, w),
            ref s => return Err(Error::Shape(format!("snapshots must be [H, W], got {s:?}"))),
        };
        layout.validate(height, width)?;
        let mut frames = Vec::with_capacity(snaps.len() * height * width);
        let mut sensors = Vec::with_capacity(snaps.len() * layout.len());
        let mut rng = noise.map(|n| SplitRng::new(n.seed));
        for s in snaps {
            if s.field.shape() != [height, width] {
                return Err(Error::Shape(format!(
                    "snapshot {} has shape {:?}, expected [{height}, {width}]",
                    s.t_index,
                    s.field.shape()
                )));
            }
            frames.extend_from_slice(s.field.data());
            let mut reading = sample_sensors(s, &layout)?.to_vec();
            if let (Some(rng), Some(n)) = (rng.as_mut(), noise) {
                reading.iter_mut().for_each(|v| *v += n.std * rng.normal());
            }
            sensors.extend(reading);
        }
        Ok(Self {
            height,
            width,
            layout,
            frames,
            sensors,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.layout.len()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.frame_len()..][..self.frame_len()]
    }

    pub fn frames(&self, range: Range<usize>) -> &[f64] {
        let n = self.frame_len();
        &self.frames[range.start * n..range.end * n]
    }

    pub fn sensors_at(&self, t: usize) -> &[f64] {
        &self.sensors[t * self.n_sensors()..][..self.n_sensors()]
    }

    pub fn sensors(&self, range: Range<usize>) -> &[f64] {
        let n = self.n_sensors();
        &self.sensors[range.start * n..range.end * n]
    }

    /// Causal window of at most `len` steps ending at `t` (inclusive).
    pub fn window_ending(&self, t: usize, len: usize) -> Range<usize> {
        let start = (t + 1).saturating_sub(len);
        start..t + 1
    }

    pub fn check_split(&self, split: &DatasetSplit) -> Result<()> {
        if split.train.end > self.len() || split.test.end > self.len() {
            return Err(Error::Config(format!(
                "split reaches step {} but the dataset holds {} steps",
                split.test.end.max(split.train.end),
                self.len()
            )));
        }
        Ok(())
    }
}
