use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fno::Activation;
use crate::spectral::diff::{check_corner, max_real_modes};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layer: usize,
    /// Feature width `M`.
    pub d_model: usize,
    /// SSM state size `N`.
    pub d_state: usize,
    /// FNO lift width `d`.
    pub fno_width: usize,
    /// Retained 1D modes `m`.
    pub fno_modes: usize,
    pub fno_layers: usize,
    pub fno2d_layers: usize,
    pub fno2d_modes_h: usize,
    pub fno2d_modes_w: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_sensors: usize,
    pub conv_k: usize,
    pub seed: u64,
    pub bias: bool,
    pub fno1d: bool,
    pub fno2d: bool,
    pub prenorm: bool,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layer: 2,
            d_model: 32,
            d_state: 8,
            fno_width: 32,
            fno_modes: 8,
            fno_layers: 4,
            fno2d_layers: 2,
            fno2d_modes_h: 8,
            fno2d_modes_w: 8,
            height: 24,
            width: 32,
            channels: 1,
            n_sensors: 16,
            conv_k: 4,
            seed: 0,
            bias: true,
            fno1d: true,
            fno2d: true,
            prenorm: false,
            activation: Activation::Silu,
        }
    }
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl ModelConfig {
    /// Field size `H·W·C` produced by the head for each time step.
    pub fn field_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layer", self.n_layer),
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("n_sensors", self.n_sensors),
            ("conv_k", self.conv_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.fno1d {
            if self.fno_width == 0 || self.fno_layers == 0 {
                return Err(Error::Config("fno_width and fno_layers must be at least 1".into()));
            }
            let cap = max_real_modes(self.d_model);
            if self.fno_modes == 0 || self.fno_modes > cap {
                return Err(Error::Config(format!(
                    "fno_modes = {} must lie in 1..={cap} for d_model = {}",
                    self.fno_modes, self.d_model
                )));
            }
        }
        if self.fno2d {
            if self.fno_width == 0 || self.fno2d_layers == 0 {
                return Err(Error::Config("fno_width and fno2d_layers must be at least 1".into()));
            }
            check_corner(self.fno2d_modes_h, self.fno2d_modes_w, self.height, self.width)?;
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_layer", self.n_layer.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_state", self.d_state.to_string()),
            ("fno_width", self.fno_width.to_string()),
            ("fno_modes", self.fno_modes.to_string()),
            ("fno_layers", self.fno_layers.to_string()),
            ("fno2d_layers", self.fno2d_layers.to_string()),
            ("fno2d_modes_h", self.fno2d_modes_h.to_string()),
            ("fno2d_modes_w", self.fno2d_modes_w.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("n_sensors", self.n_sensors.to_string()),
            ("conv_k", self.conv_k.to_string()),
            ("seed", self.seed.to_string()),
            ("bias", self.bias.to_string()),
            ("fno1d", self.fno1d.to_string()),
            ("fno2d", self.fno2d.to_string()),
            ("prenorm", self.prenorm.to_string()),
            ("activation", self.activation.to_string()),
        ]
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "n_layer" => self.n_layer = parse_num(key, v)?,
            "d_model" => self.d_model = parse_num(key, v)?,
            "d_state" => self.d_state = parse_num(key, v)?,
            "fno_width" => self.fno_width = parse_num(key, v)?,
            "fno_modes" => self.fno_modes = parse_num(key, v)?,
            "fno_layers" => self.fno_layers = parse_num(key, v)?,
            "fno2d_layers" => self.fno2d_layers = parse_num(key, v)?,
            "fno2d_modes_h" => self.fno2d_modes_h = parse_num(key, v)?,
            "fno2d_modes_w" => self.fno2d_modes_w = parse_num(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "n_sensors" => self.n_sensors = parse_num(key, v)?,
            "conv_k" => self.conv_k = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "bias" => self.bias = parse_bool(key, v)?,
            "fno1d" => self.fno1d = parse_bool(key, v)?,
            "fno2d" => self.fno2d = parse_bool(key, v)?,
            "prenorm" => self.prenorm = parse_bool(key, v)?,
            "activation" => self.activation = v.parse()?,
            _ => return Err(Error::Config(format!("unknown model setting {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output; keys not mentioned keep
    /// their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}
