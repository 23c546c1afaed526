use std::time::Instant;

use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::{parse_num, Checkpoint, FrMamba, OptimizerState};
use crate::rng::{RngState, SplitRng};
use crate::tensor::{Tape, Tensor};

use super::eval::predict_mae;
use super::metrics::mae_loss;
use super::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Window length `L` in time steps.
    pub window: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Gradient-norm ceiling; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
    /// Windows drawn per epoch; 0 means `⌈train steps / L⌉`.
    pub windows_per_epoch: usize,
    /// Test-set evaluation cadence in epochs (the last epoch always
    /// evaluates); 0 disables it.
    pub eval_every: usize,
    /// Checkpoint cadence in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 1,
            window: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip: 1.0,
            seed: 0,
            windows_per_epoch: 0,
            eval_every: 5,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip: (self.clip > 0.0).then_some(self.clip),
        }
    }

    pub fn windows_for(&self, split: &DatasetSplit) -> usize {
        if self.windows_per_epoch > 0 {
            self.windows_per_epoch
        } else {
            split.train.len().div_ceil(self.window.max(1))
        }
    }

    pub fn steps_per_epoch(&self, split: &DatasetSplit) -> usize {
        self.windows_for(split).div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self, split: &DatasetSplit) -> Result<()> {
        if self.batch_size == 0 || self.window == 0 {
            return Err(Error::Config("batch_size and window must be at least 1".into()));
        }
        if self.window > split.train.len() {
            return Err(Error::Config(format!(
                "window {} exceeds the {} training steps",
                self.window,
                split.train.len()
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if !(self.clip >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("clip and weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("window", self.window.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("clip", self.clip.to_string()),
            ("train_seed", self.seed.to_string()),
            ("windows_per_epoch", self.windows_per_epoch.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "train_seed" => self.seed = parse_num(key, v)?,
            "windows_per_epoch" => self.windows_per_epoch = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown training setting {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_mae: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub test_mae: Vec<(usize, f64)>,
}

impl TrainReport {
    /// `epoch,train_loss,test_mae` rows; the MAE cell is empty when the
    /// epoch was not evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_mae\n");
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let epoch = i + 1;
            let mae = self
                .test_mae
                .iter()
                .find(|(e, _)| *e == epoch)
                .map(|(_, m)| m.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{epoch},{loss},{mae}\n"));
        }
        out
    }
}

/// Drives optimization of one model; owns the optimizer and sampling RNG so
/// a run can be checkpointed and resumed.
pub struct Trainer<'a> {
    model: &'a mut FrMamba,
    data: &'a Dataset,
    split: &'a DatasetSplit,
    cfg: TrainConfig,
    adam: Adam,
    rng: SplitRng,
    epoch: usize,
    report: TrainReport,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut FrMamba, data: &'a Dataset, split: &'a DatasetSplit, cfg: TrainConfig) -> Result<Self> {
        let adam = Adam::new(cfg.adam(), &model.params);
        let rng = SplitRng::new(cfg.seed);
        Self::assemble(model, data, split, cfg, adam, rng)
    }

    /// Continues from saved optimizer moments and sampler state.
    pub fn resume(
        model: &'a mut FrMamba,
        data: &'a Dataset,
        split: &'a DatasetSplit,
        cfg: TrainConfig,
        optimizer: OptimizerState,
        rng: RngState,
    ) -> Result<Self> {
        let adam = Adam::resume(cfg.adam(), &model.params, optimizer)?;
        Self::assemble(model, data, split, cfg, adam, SplitRng::from_state(rng))
    }

    fn assemble(
        model: &'a mut FrMamba,
        data: &'a Dataset,
        split: &'a DatasetSplit,
        cfg: TrainConfig,
        adam: Adam,
        rng: SplitRng,
    ) -> Result<Self> {
        cfg.validate(split)?;
        data.check_split(split)?;
        let mc = &model.config;
        if (mc.height, mc.width, mc.channels) != (data.height, data.width, 1) || mc.n_sensors != data.n_sensors() {
            return Err(Error::Config(format!(
                "model expects {} sensors and a {}x{}x{} field; dataset has {} sensors and {}x{}x1",
                mc.n_sensors,
                mc.height,
                mc.width,
                mc.channels,
                data.n_sensors(),
                data.height,
                data.width
            )));
        }
        Ok(Self {
            model,
            data,
            split,
            cfg,
            adam,
            rng,
            epoch: 0,
            report: TrainReport::default(),
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &FrMamba {
        self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn into_report(self) -> TrainReport {
        self.report
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.adam.state.clone(), self.rng.state())
    }

    fn sample_batch(&mut self) -> (Tensor, Tensor) {
        let (b, l) = (self.cfg.batch_size, self.cfg.window);
        let (ns, hw) = (self.data.n_sensors(), self.data.frame_len());
        let train = self.split.train.clone();
        let mut x = Vec::with_capacity(b * l * ns);
        let mut y = Vec::with_capacity(b * l * hw);
        for _ in 0..b {
            let start = self.rng.below(train.start, train.end - l + 1);
            x.extend_from_slice(self.data.sensors(start..start + l));
            y.extend_from_slice(self.data.frames(start..start + l));
        }
        let (h, w) = (self.data.height, self.data.width);
        (
            Tensor::new(&[b, l, ns], x).expect("sized above"),
            Tensor::new(&[b, l, h, w, 1], y).expect("sized above"),
        )
    }

    /// One optimizer step on a fresh batch; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.adam.state.step as usize + 1;
        let (x, y) = self.sample_batch();
        let tape = Tape::new();
        let p = self.model.params.bind(&tape, true);
        let pred = self.model.forward_on(&p, tape.constant(x), false).map_err(|e| match e {
            Error::NonFinite(layer) => Error::Divergence {
                step,
                detail: format!("non-finite activations in {layer}"),
            },
            other => other,
        })?;
        let loss = mae_loss(pred, tape.constant(y))?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss = {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = p.vars().iter().map(|&v| grads.wrt(v).clone()).collect();
        if g.iter().any(|t| !t.all_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite gradient".into(),
            });
        }
        self.adam.step(&mut self.model.params, &g)?;
        self.report.step_losses.push(value);
        Ok(value)
    }

    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        let steps = self.cfg.steps_per_epoch(self.split);
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.step()?;
        }
        self.epoch += 1;
        let train_loss = total / steps as f64;
        self.report.epoch_losses.push(train_loss);
        let evaluate = self.cfg.eval_every > 0
            && (self.epoch % self.cfg.eval_every == 0 || self.epoch == self.cfg.epochs);
        let test_mae = if evaluate {
            let m = predict_mae(self.model, self.data, self.split.test.clone(), self.cfg.window)?;
            self.report.test_mae.push((self.epoch, m));
            Some(m)
        } else {
            None
        };
        Ok(EpochSummary {
            epoch: self.epoch,
            train_loss,
            test_mae,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, on_epoch: &mut dyn FnMut(&EpochSummary, &Trainer<'_>) -> Result<()>) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            let summary = self.run_epoch()?;
            on_epoch(&summary, self)?;
        }
        Ok(())
    }
}

/// Trains `model` in place for `cfg.epochs` epochs.
pub fn train(model: &mut FrMamba, data: &Dataset, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(TrainReport, Checkpoint)> {
    let mut trainer = Trainer::new(model, data, split, cfg.clone())?;
    trainer.run(&mut |_, _| Ok(()))?;
    let ckpt = trainer.checkpoint();
    Ok((trainer.into_report(), ckpt))
}
