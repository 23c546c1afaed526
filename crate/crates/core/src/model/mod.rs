//! The full reconstruction network: sensor stem, stacked blocks that fuse a
//! selective-scan temporal branch with an FNO1d spatial branch, an FFN head
//! producing one field per time step, and a residual FNO2d refinement.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, OptimizerState};
pub use config::ModelConfig;
pub(crate) use config::parse_num;

use crate::error::{Error, Result};
use crate::fno::{Fno2d, FnoStack};
use crate::nn::{Bound, Linear, ParamId, ParamStore};
use crate::rng::SplitRng;
use crate::ssm::SelectiveSsm;
use crate::tensor::{Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-6;

/// `gate ⊙ e_t + gate ⊙ e_s + e_prev`; the spatial term drops out when the
/// FNO1d branch is disabled.
pub fn fuse<'t>(e_t: Var<'t>, e_s: Option<Var<'t>>, gate: Var<'t>, e_prev: Var<'t>) -> Result<Var<'t>> {
    let mut fused = gate.mul(e_t)?;
    if let Some(e_s) = e_s {
        fused = fused.add(gate.mul(e_s)?)?;
    }
    fused.add(e_prev)
}

#[derive(Clone, Debug)]
pub struct Block {
    pub ssm: SelectiveSsm,
    pub fno: Option<FnoStack>,
    pub norm: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct FrMamba {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub stem: Linear,
    pub blocks: Vec<Block>,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub refine: Option<Fno2d>,
}

fn check_finite(v: Var<'_>, layer: &str) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(layer.to_string()))
    }
}

impl FrMamba {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = SplitRng::new(c.seed);
        let mut params = ParamStore::new();
        let stem = Linear::new(&mut params, "stem", c.n_sensors, c.d_model, c.bias, &mut rng);
        let blocks = (0..c.n_layer)
            .map(|i| {
                let prefix = format!("blocks.{i}");
                let norm = c
                    .prenorm
                    .then(|| params.add(format!("{prefix}.norm"), Tensor::ones(&[c.d_model])));
                let ssm = SelectiveSsm::new(
                    &mut params,
                    &format!("{prefix}.ssm"),
                    c.d_model,
                    c.d_state,
                    c.conv_k,
                    c.bias,
                    &mut rng,
                );
                let fno = c.fno1d.then(|| {
                    FnoStack::new(
                        &mut params,
                        &format!("{prefix}.fno"),
                        c.fno_layers,
                        c.fno_modes,
                        c.fno_width,
                        c.bias,
                        c.activation,
                        &mut rng,
                    )
                });
                Block { ssm, fno, norm }
            })
            .collect();
        let head_hidden = Linear::new(&mut params, "head.hidden", c.d_model, 4 * c.d_model, c.bias, &mut rng);
        let head_out = Linear::new(&mut params, "head.out", 4 * c.d_model, c.field_len(), c.bias, &mut rng);
        let refine = c.fno2d.then(|| {
            Fno2d::new(
                &mut params,
                "refine",
                c.channels,
                c.fno2d_layers,
                (c.fno2d_modes_h, c.fno2d_modes_w),
                c.fno_width,
                c.bias,
                c.activation,
                &mut rng,
            )
        });
        Ok(Self {
            config,
            params,
            stem,
            blocks,
            head_hidden,
            head_out,
            refine,
        })
    }

    /// Closed-form scalar parameter count of a configuration.
    pub fn param_count(c: &ModelConfig) -> usize {
        let lin = |i: usize, o: usize| i * o + if c.bias { o } else { 0 };
        let (m, n, d) = (c.d_model, c.d_state, c.fno_width);
        let ssm = 2 * lin(m, m) + m * c.conv_k + 2 * lin(m, n) + m * m + m + m * n;
        let fourier = |modes: usize| 2 * modes * d * d + lin(d, d);
        let fno1d = if c.fno1d {
            lin(1, d) + lin(d, 1) + c.fno_layers * fourier(c.fno_modes)
        } else {
            0
        };
        let norm = if c.prenorm { m } else { 0 };
        let fno2d = if c.fno2d {
            lin(c.channels, d)
                + lin(d, c.channels)
                + c.fno2d_layers * fourier(c.fno2d_modes_h * c.fno2d_modes_w)
        } else {
            0
        };
        lin(c.n_sensors, m) + c.n_layer * (ssm + fno1d + norm) + lin(m, 4 * m) + lin(4 * m, c.field_len()) + fno2d
    }

    pub fn stem<'t>(&self, p: &Bound<'t>, x_seq: Var<'t>) -> Result<Var<'t>> {
        let s = x_seq.shape();
        if s.len() != 3 || s[2] != self.config.n_sensors {
            return Err(Error::Shape(format!(
                "sensor input must be [B, L, {}], got {s:?}",
                self.config.n_sensors
            )));
        }
        self.stem.forward(p, x_seq)
    }

    pub fn block_forward<'t>(&self, p: &Bound<'t>, index: usize, e_prev: Var<'t>) -> Result<Var<'t>> {
        let block = &self.blocks[index];
        let input = match block.norm {
            Some(g) => e_prev.rms_norm(p.get(g), NORM_EPS)?,
            None => e_prev,
        };
        let sel = block.ssm.selective_embed(p, input)?;
        let e_t = block.ssm.forward(p, &sel)?;
        let e_s = block.fno.as_ref().map(|f| f.forward(p, sel.x_emb1)).transpose()?;
        fuse(e_t, e_s, sel.x_emb2, e_prev)
    }

    /// `[B, L, M] → [B, L, H, W, C]`, one field per time step.
    pub fn head<'t>(&self, p: &Bound<'t>, e: Var<'t>) -> Result<Var<'t>> {
        let s = e.shape();
        let c = &self.config;
        let hidden = self.head_hidden.forward(p, e)?.silu();
        self.head_out
            .forward(p, hidden)?
            .reshape(&[s[0], s[1], c.height, c.width, c.channels])
    }

    /// Full pipeline on a tape. With `last_only` only the final time step is
    /// decoded, giving `[B, 1, H, W, C]`.
    pub fn forward_on<'t>(&self, p: &Bound<'t>, x_seq: Var<'t>, last_only: bool) -> Result<Var<'t>> {
        let mut e = self.stem(p, x_seq)?;
        check_finite(e, "stem")?;
        for i in 0..self.blocks.len() {
            e = self.block_forward(p, i, e)?;
            check_finite(e, &format!("blocks.{i}"))?;
        }
        if last_only {
            let l = e.shape()[1];
            e = e.narrow(1, l - 1, 1)?;
        }
        let u = self.head(p, e)?;
        check_finite(u, "head")?;
        let Some(refine) = &self.refine else {
            return Ok(u);
        };
        let s = u.shape();
        let c = &self.config;
        let flat = u.reshape(&[s[0] * s[1], c.height, c.width, c.channels])?;
        let out = refine.refine(p, flat)?.reshape(&s)?;
        check_finite(out, "refine")?;
        Ok(out)
    }

    /// Inference without gradient tracking: `[B, L, N_s] → [B, L, H, W, C]`.
    pub fn forward(&self, x_seq: &Tensor) -> Result<Tensor> {
        self.run(x_seq, false)
    }

    /// Field at the final step of each window: `[B, L, N_s] → [B, 1, H, W, C]`.
    pub fn forward_last(&self, x_seq: &Tensor) -> Result<Tensor> {
        self.run(x_seq, true)
    }

    fn run(&self, x_seq: &Tensor, last_only: bool) -> Result<Tensor> {
        if !x_seq.all_finite() {
            return Err(Error::NonFinite("sensor input".into()));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(self.forward_on(&p, tape.constant(x_seq.clone()), last_only)?.value())
    }

    pub fn to_checkpoint(&self, optimizer: OptimizerState, rng: crate::rng::RngState) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            optimizer,
            rng,
        }
    }

    /// Rebuilds the model described by a checkpoint's config and loads its
    /// parameters.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ckpt.config.clone())?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }

    /// Replaces every parameter by name; the set of names and each shape
    /// must match this model exactly.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        use crate::error::FormatError;
        if named.len() != self.params.len() {
            return Err(FormatError::Inconsistent(format!(
                "checkpoint holds {} tensors, model has {}",
                named.len(),
                self.params.len()
            ))
            .into());
        }
        for (name, t) in named {
            let id = self.params.id_of(name).ok_or_else(|| {
                FormatError::Inconsistent(format!("checkpoint tensor {name:?} is not a model parameter"))
            })?;
            let expected = self.params.get(id).shape().to_vec();
            if expected != t.shape() {
                return Err(FormatError::ShapeMismatch {
                    name: name.clone(),
                    expected,
                    found: t.shape().to_vec(),
                }
                .into());
            }
            self.params.set(id, t.clone())?;
        }
        Ok(())
    }
}
