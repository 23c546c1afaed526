#![allow(dead_code)]

use frmamba::data::{DataConfig, Dataset};
use frmamba::model::ModelConfig;
use frmamba::rng::SplitRng;
use frmamba::ssm::{selective_scan, DiscreteSsm};
use frmamba::traineval::TrainConfig;
use frmamba::{Result, Tape, Tensor, Var};

/// Uniform entries in `[lo, hi)`.
pub fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = SplitRng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// `Σ w ⊙ x` with fixed pseudo-random weights: a scalar whose gradient
/// probes every output element.
pub fn probe_loss<'t>(tape: &'t Tape, x: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = uniform(seed, &x.shape(), -1.0, 1.0);
    Ok(x.mul(tape.constant(w))?.sum())
}

/// The small configuration used for model-level gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layer: 1,
        d_model: 4,
        d_state: 2,
        fno_width: 4,
        fno_modes: 2,
        fno_layers: 1,
        fno2d_layers: 1,
        fno2d_modes_h: 2,
        fno2d_modes_w: 2,
        height: 4,
        width: 4,
        n_sensors: 3,
        conv_k: 2,
        ..Default::default()
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A short 8×8 street with a 2×2 sensor lattice: 160 train / 40 test steps.
pub fn small_data() -> DataConfig {
    let mut c = DataConfig::default();
    c.street.height = 8;
    c.street.width = 8;
    c.street.spacing = 8.0;
    c.street.n_pairs = 1;
    c.street.sigma = 1.5;
    c.street.steps = 200;
    c.sensor_rows = 2;
    c.sensor_cols = 2;
    c
}

/// `tiny_config` sized for `small_data`.
pub fn tiny_for(data: &Dataset) -> ModelConfig {
    ModelConfig {
        height: data.height,
        width: data.width,
        n_sensors: data.n_sensors(),
        ..tiny_config()
    }
}

/// A couple of short epochs on `small_data`.
pub fn short_training() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        window: 16,
        windows_per_epoch: 3,
        eval_every: 1,
        ..Default::default()
    }
}

/// `(e^{Δa} − 1)/a = Δ·Σ_{k≥0} (Δa)^k/(k+1)!`, 200 terms.
pub fn taylor_gain(a: f64, delta: f64) -> f64 {
    let z = delta * a;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..200 {
        sum += term;
        term *= z / (k + 2) as f64;
    }
    delta * sum
}

/// Library scan on constant inputs.
pub fn scan(ab: &Tensor, bb: &Tensor, c: &Tensor, x: &Tensor) -> Tensor {
    let tape = Tape::new();
    let d = DiscreteSsm {
        a_bar: tape.constant(ab.clone()),
        b_bar: tape.constant(bb.clone()),
    };
    selective_scan(&d, tape.constant(c.clone()), tape.constant(x.clone()))
        .unwrap()
        .value()
}

/// Copies one time slice of shape `per` to every step.
pub fn repeat_in_time(b: usize, l: usize, per: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let width: usize = per.iter().product();
    let base = uniform(seed, &[b, width], lo, hi);
    let mut shape = vec![b, l];
    shape.extend_from_slice(per);
    Tensor::from_fn(&shape, |i| {
        let bi = i / (l * width);
        base.data()[bi * width + i % width]
    })
}
