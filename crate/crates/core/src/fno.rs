//! Fourier neural operators: the 1D spatial branch over the feature axis and
//! the 2D refinement applied to reconstructed fields.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamId, ParamStore};
use crate::rng::SplitRng;
use crate::spectral::diff::{irdft2_modes, irdft_modes, mode_mix, rdft2_modes, rdft_modes};
use crate::tensor::ops::UnaryOp;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Silu,
    Gelu,
    Relu,
    /// No nonlinearity. Used for analysis and tests.
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Silu => x.unary(UnaryOp::Silu),
            Activation::Gelu => x.unary(UnaryOp::Gelu),
            Activation::Relu => x.unary(UnaryOp::Relu),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "silu" => Ok(Activation::Silu),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected silu, gelu, relu or identity)"
            ))),
        }
    }
}

fn spectral_init(rng: &mut SplitRng, shape: &[usize], width: usize) -> Tensor {
    let scale = 1.0 / (width * width) as f64;
    Tensor::from_fn(shape, |_| scale * rng.uniform(0.0, 1.0))
}

/// One Fourier layer: complex per-mode weights plus a pointwise local map.
/// The mode axis is flattened, so 2D layers store `[mh·mw, d, d]`.
#[derive(Clone, Debug)]
pub struct FnoLayerWeights {
    pub modes_re: ParamId,
    pub modes_im: ParamId,
    pub local: Linear,
}

impl FnoLayerWeights {
    fn new(store: &mut ParamStore, prefix: &str, modes: usize, width: usize, bias: bool, rng: &mut SplitRng) -> Self {
        let shape = [modes, width, width];
        let modes_re = store.add(format!("{prefix}.modes_re"), spectral_init(rng, &shape, width));
        let modes_im = store.add(format!("{prefix}.modes_im"), spectral_init(rng, &shape, width));
        let local = Linear::new(store, &format!("{prefix}.local"), width, width, bias, rng);
        Self {
            modes_re,
            modes_im,
            local,
        }
    }

    fn num_scalars(&self, modes: usize, width: usize) -> usize {
        2 * modes * width * width + self.local.num_scalars()
    }

    fn modes<'t>(&self, p: &Bound<'t>) -> Result<Var<'t>> {
        Var::complex(p.get(self.modes_re), p.get(self.modes_im))
    }
}

/// `v: [batch, M, d] → σ(local(v) + irdft(mix(rdft(v))))`.
pub fn fourier_layer<'t>(
    p: &Bound<'t>,
    v: Var<'t>,
    w: &FnoLayerWeights,
    modes: usize,
    act: Activation,
) -> Result<Var<'t>> {
    let len = v.shape()[1];
    let spec = mode_mix(rdft_modes(v, modes)?, w.modes(p)?)?;
    let spectral = irdft_modes(spec, len)?;
    Ok(act.apply(w.local.forward(p, v)?.add(spectral)?))
}

/// 2D counterpart of [`fourier_layer`] over `v: [N, H, W, d]`.
pub fn fourier_layer2d<'t>(
    p: &Bound<'t>,
    v: Var<'t>,
    w: &FnoLayerWeights,
    (mh, mw): (usize, usize),
    act: Activation,
) -> Result<Var<'t>> {
    let (n, h, wd, d) = match *v.shape() {
        [n, h, w, d] => (n, h, w, d),
        ref s => return Err(Error::Shape(format!("fourier_layer2d expects [N,H,W,d], got {s:?}"))),
    };
    let spec = rdft2_modes(v, mh, mw)?.reshape(&[n, mh * mw, d])?;
    let spec = mode_mix(spec, w.modes(p)?)?.reshape(&[n, mh, mw, d])?;
    let spectral = irdft2_modes(spec, h, wd)?;
    Ok(act.apply(w.local.forward(p, v)?.add(spectral)?))
}

/// FNO over the feature axis of each time step: lift `1 → d`, `T` Fourier
/// layers, project `d → 1`.
#[derive(Clone, Debug)]
pub struct FnoStack {
    pub proj_in: Linear,
    pub layers: Vec<FnoLayerWeights>,
    pub proj_out: Linear,
    pub modes: usize,
    pub width: usize,
    pub activation: Activation,
}

impl FnoStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        n_layers: usize,
        modes: usize,
        width: usize,
        bias: bool,
        activation: Activation,
        rng: &mut SplitRng,
    ) -> Self {
        let proj_in = Linear::new(store, &format!("{prefix}.proj_in"), 1, width, bias, rng);
        let layers = (0..n_layers)
            .map(|i| FnoLayerWeights::new(store, &format!("{prefix}.layers.{i}"), modes, width, bias, rng))
            .collect();
        let proj_out = Linear::new(store, &format!("{prefix}.proj_out"), width, 1, bias, rng);
        Self {
            proj_in,
            layers,
            proj_out,
            modes,
            width,
            activation,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.proj_in.num_scalars()
            + self.proj_out.num_scalars()
            + self
                .layers
                .iter()
                .map(|l| l.num_scalars(self.modes, self.width))
                .sum::<usize>()
    }

    /// `x: [B, L, M] → [B·L, M, d]`.
    pub fn lift<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("FNO1d expects [B,L,M], got {s:?}")));
        }
        let v = x.reshape(&[s[0] * s[1], s[2], 1])?;
        self.proj_in.forward(p, v)
    }

    /// `E_S` for one block: `[B, L, M] → [B, L, M]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let mut v = self.lift(p, x)?;
        for layer in &self.layers {
            v = fourier_layer(p, v, layer, self.modes, self.activation)?;
        }
        self.proj_out.forward(p, v)?.reshape(&shape)
    }
}

/// Residual 2D refinement `u + FNO2d(u)` over `u: [N, H, W, C]`.
#[derive(Clone, Debug)]
pub struct Fno2d {
    pub proj_in: Linear,
    pub layers: Vec<FnoLayerWeights>,
    pub proj_out: Linear,
    pub modes: (usize, usize),
    pub width: usize,
    pub activation: Activation,
}

impl Fno2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        n_layers: usize,
        modes: (usize, usize),
        width: usize,
        bias: bool,
        activation: Activation,
        rng: &mut SplitRng,
    ) -> Self {
        let proj_in = Linear::new(store, &format!("{prefix}.proj_in"), channels, width, bias, rng);
        let layers = (0..n_layers)
            .map(|i| {
                FnoLayerWeights::new(store, &format!("{prefix}.layers.{i}"), modes.0 * modes.1, width, bias, rng)
            })
            .collect();
        let proj_out = Linear::new(store, &format!("{prefix}.proj_out"), width, channels, bias, rng);
        Self {
            proj_in,
            layers,
            proj_out,
            modes,
            width,
            activation,
        }
    }

    pub fn num_scalars(&self) -> usize {
        let k = self.modes.0 * self.modes.1;
        self.proj_in.num_scalars()
            + self.proj_out.num_scalars()
            + self.layers.iter().map(|l| l.num_scalars(k, self.width)).sum::<usize>()
    }

    /// The operator without the residual.
    pub fn operator<'t>(&self, p: &Bound<'t>, u: Var<'t>) -> Result<Var<'t>> {
        let mut v = self.proj_in.forward(p, u)?;
        for layer in &self.layers {
            v = fourier_layer2d(p, v, layer, self.modes, self.activation)?;
        }
        self.proj_out.forward(p, v)
    }

    pub fn refine<'t>(&self, p: &Bound<'t>, u: Var<'t>) -> Result<Var<'t>> {
        u.add(self.operator(p, u)?)
    }
}
