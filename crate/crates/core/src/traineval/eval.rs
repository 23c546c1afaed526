use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, FrMamba};
use crate::registry::Registry;
use crate::tensor::Tensor;

use super::metrics::{abs_error_sum, max_ae};

/// Windows decoded together during evaluation.
const EVAL_BATCH: usize = 16;

/// Anything that maps a dataset step to a full-field estimate.
pub trait Reconstructor {
    fn name(&self) -> &str;

    /// Identifies the parameters behind the estimates.
    fn fingerprint(&self) -> String {
        self.name().to_string()
    }

    /// Estimates `[H·W]` for each of `steps`, concatenated in order.
    fn reconstruct(&self, data: &Dataset, steps: &[usize]) -> Result<Vec<f64>>;
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Field at the last step of each causal window ending at `steps`.
pub fn predict_last(model: &FrMamba, data: &Dataset, steps: &[usize], window: usize) -> Result<Vec<f64>> {
    let ns = data.n_sensors();
    let mut out = Vec::with_capacity(steps.len() * data.frame_len());
    let mut i = 0;
    while i < steps.len() {
        let len = data.window_ending(steps[i], window).len();
        let mut j = i;
        let mut x = Vec::new();
        while j < steps.len() && j - i < EVAL_BATCH && data.window_ending(steps[j], window).len() == len {
            x.extend_from_slice(data.sensors(data.window_ending(steps[j], window)));
            j += 1;
        }
        let batch = Tensor::new(&[j - i, len, ns], x)?;
        out.extend_from_slice(model.forward_last(&batch)?.data());
        i = j;
    }
    Ok(out)
}

/// Test MAE of `model` over `range` using causal windows of length `window`.
pub fn predict_mae(model: &FrMamba, data: &Dataset, range: Range<usize>, window: usize) -> Result<f64> {
    let steps: Vec<usize> = range.clone().collect();
    let pred = predict_last(model, data, &steps, window)?;
    super::metrics::mae(&pred, data.frames(range))
}

pub struct ModelReconstructor {
    pub model: FrMamba,
    pub window: usize,
}

impl ModelReconstructor {
    pub fn new(model: FrMamba, window: usize) -> Self {
        Self { model, window }
    }
}

impl Reconstructor for ModelReconstructor {
    fn name(&self) -> &str {
        "frmamba"
    }

    fn fingerprint(&self) -> String {
        let cfg = self.model.config.to_text().into_bytes();
        let params = self
            .model
            .params
            .tensors()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>());
        format!("{:016x}", fnv1a(cfg.into_iter().chain(params)))
    }

    fn reconstruct(&self, data: &Dataset, steps: &[usize]) -> Result<Vec<f64>> {
        predict_last(&self.model, data, steps, self.window)
    }
}

/// Mean training field, whatever the sensors read.
pub struct MeanField {
    pub mean: Vec<f64>,
}

impl MeanField {
    pub fn fit(data: &Dataset, train: Range<usize>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("empty training range".into()));
        }
        let n = data.frame_len();
        let mut mean = vec![0.0; n];
        for t in train.clone() {
            for (m, v) in mean.iter_mut().zip(data.frame(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        Ok(Self { mean })
    }
}

impl Reconstructor for MeanField {
    fn name(&self) -> &str {
        "persistence"
    }

    fn reconstruct(&self, _data: &Dataset, steps: &[usize]) -> Result<Vec<f64>> {
        Ok(steps.iter().flat_map(|_| self.mean.iter().copied()).collect())
    }
}

/// Affine least-squares map from one step's sensor readings to its field.
pub struct LinearLsq {
    /// `[N_s + 1, H·W]`, intercept in the last row.
    coef: DMatrix<f64>,
}

impl LinearLsq {
    pub fn fit(data: &Dataset, train: Range<usize>) -> Result<Self> {
        let (ns, n) = (data.n_sensors(), train.len());
        if n <= ns {
            return Err(Error::Config(format!(
                "{n} training steps cannot determine a map from {ns} sensors"
            )));
        }
        let x = DMatrix::from_fn(n, ns + 1, |i, j| {
            if j == ns {
                1.0
            } else {
                data.sensors_at(train.start + i)[j]
            }
        });
        let y = DMatrix::from_fn(n, data.frame_len(), |i, j| data.frame(train.start + i)[j]);
        let coef = x
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Config(format!("least-squares fit failed: {e}")))?;
        Ok(Self { coef })
    }
}

impl Reconstructor for LinearLsq {
    fn name(&self) -> &str {
        "linear-lsq"
    }

    fn reconstruct(&self, data: &Dataset, steps: &[usize]) -> Result<Vec<f64>> {
        let ns = data.n_sensors();
        let hw = self.coef.ncols();
        let mut out = Vec::with_capacity(steps.len() * hw);
        for &t in steps {
            let s = data.sensors_at(t);
            for j in 0..hw {
                let mut acc = self.coef[(ns, j)];
                for (i, v) in s.iter().enumerate() {
                    acc += v * self.coef[(i, j)];
                }
                out.push(acc);
            }
        }
        Ok(out)
    }
}

/// Returns the ground truth.
pub struct Oracle;

impl Reconstructor for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn reconstruct(&self, data: &Dataset, steps: &[usize]) -> Result<Vec<f64>> {
        Ok(steps.iter().flat_map(|&t| data.frame(t).iter().copied()).collect())
    }
}

/// Predicts zero everywhere.
pub struct ZeroField;

impl Reconstructor for ZeroField {
    fn name(&self) -> &str {
        "zero"
    }

    fn reconstruct(&self, data: &Dataset, steps: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![0.0; steps.len() * data.frame_len()])
    }
}

pub struct ReconstructorArgs {
    pub data: Arc<Dataset>,
    pub split: DatasetSplit,
    /// Required by `frmamba`.
    pub checkpoint: Option<PathBuf>,
    pub window: usize,
}

pub fn reconstructors() -> Registry<dyn Reconstructor, ReconstructorArgs> {
    let mut reg: Registry<dyn Reconstructor, ReconstructorArgs> = Registry::new("reconstructor");
    reg.register("frmamba", "trained network loaded from --checkpoint", |a| {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("method frmamba needs a checkpoint".into()))?;
        let model = FrMamba::from_checkpoint(&Checkpoint::load(path)?)?;
        Ok(Box::new(ModelReconstructor::new(model, a.window)))
    })
    .register("persistence", "mean training field", |a| {
        Ok(Box::new(MeanField::fit(&a.data, a.split.train.clone())?))
    })
    .register("linear-lsq", "affine least-squares sensor-to-field map", |a| {
        Ok(Box::new(LinearLsq::fit(&a.data, a.split.train.clone())?))
    })
    .register("oracle", "ground truth (sanity check)", |_| Ok(Box::new(Oracle)))
    .register("zero", "all-zero field", |_| Ok(Box::new(ZeroField)));
    reg
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMetrics {
    pub name: String,
    pub range: Range<usize>,
    pub mae: f64,
    pub max_ae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub fingerprint: String,
    pub intervals: Vec<IntervalMetrics>,
    pub avg_mae: f64,
    pub avg_max_ae: f64,
    pub wall_time_s: f64,
}

impl EvalReport {
    /// Equality ignoring wall time.
    pub fn same_results(&self, other: &EvalReport) -> bool {
        self.method == other.method
            && self.fingerprint == other.fingerprint
            && self.intervals == other.intervals
            && self.avg_mae.to_bits() == other.avg_mae.to_bits()
            && self.avg_max_ae.to_bits() == other.avg_max_ae.to_bits()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,interval,start,end,mae,max_ae\n");
        for iv in &self.intervals {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{:e}",
                self.method, iv.name, iv.range.start, iv.range.end, iv.mae, iv.max_ae
            );
        }
        let (start, end) = match (self.intervals.first(), self.intervals.last()) {
            (Some(a), Some(b)) => (a.range.start, b.range.end),
            _ => (0, 0),
        };
        let _ = writeln!(
            s,
            "{},average,{start},{end},{:e},{:e}",
            self.method, self.avg_mae, self.avg_max_ae
        );
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method {}  fingerprint {}  wall {:.2}s", self.method, self.fingerprint, self.wall_time_s);
        let _ = writeln!(s, "{:<9} {:>11} {:>12} {:>12}", "interval", "steps", "MAE", "Max-AE");
        for iv in &self.intervals {
            let steps = format!("{}-{}", iv.range.start, iv.range.end - 1);
            let _ = writeln!(s, "{:<9} {:>11} {:>12.4e} {:>12.4e}", iv.name, steps, iv.mae, iv.max_ae);
        }
        let _ = writeln!(s, "{:<9} {:>11} {:>12.4e} {:>12.4e}", "average", "", self.avg_mae, self.avg_max_ae);
        s
    }
}

/// Scores `recon` on every test interval.
pub fn evaluate(recon: &dyn Reconstructor, data: &Dataset, split: &DatasetSplit) -> Result<EvalReport> {
    data.check_split(split)?;
    if split.intervals.is_empty() {
        return Err(Error::Config("split has no evaluation intervals".into()));
    }
    let started = Instant::now();
    let mut intervals = Vec::with_capacity(split.intervals.len());
    for (i, range) in split.intervals.iter().enumerate() {
        let steps: Vec<usize> = range.clone().collect();
        let pred = recon.reconstruct(data, &steps)?;
        let truth = data.frames(range.clone());
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} returned {} values for {} expected",
                recon.name(),
                pred.len(),
                truth.len()
            )));
        }
        intervals.push(IntervalMetrics {
            name: format!("T{}", i + 1),
            range: range.clone(),
            mae: abs_error_sum(&pred, truth) / truth.len() as f64,
            max_ae: max_ae(&pred, truth)?,
        });
    }
    let k = intervals.len() as f64;
    Ok(EvalReport {
        method: recon.name().to_string(),
        fingerprint: recon.fingerprint(),
        avg_mae: intervals.iter().map(|m| m.mae).sum::<f64>() / k,
        avg_max_ae: intervals.iter().map(|m| m.max_ae).sum::<f64>() / k,
        intervals,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
