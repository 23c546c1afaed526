use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::parse_num;

use super::{generate_vortex_street, make_split, Dataset, DatasetSplit, FieldSnapshot, SensorLayout, SensorNoise, VortexStreetConfig};

/// Everything needed to rebuild a dataset: generator, sensor lattice,
/// noise and split.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub street: VortexStreetConfig,
    pub sensor_rows: usize,
    pub sensor_cols: usize,
    /// Standard deviation of additive Gaussian sensor noise, 0 for none.
    /// Seeded by `street.seed`.
    pub noise_std: f64,
    /// `train : test` ratio.
    pub split: (usize, usize),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            street: VortexStreetConfig::default(),
            sensor_rows: 4,
            sensor_cols: 4,
            noise_std: 0.0,
            split: (4, 1),
        }
    }
}

impl DataConfig {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.street;
        vec![
            ("height", s.height.to_string()),
            ("width", s.width.to_string()),
            ("n_pairs", s.n_pairs.to_string()),
            ("u_adv", s.u_adv.to_string()),
            ("sigma", s.sigma.to_string()),
            ("amplitude", s.amplitude.to_string()),
            ("spacing", s.spacing.to_string()),
            ("steps", s.steps.to_string()),
            ("data_seed", s.seed.to_string()),
            ("sensor_rows", self.sensor_rows.to_string()),
            ("sensor_cols", self.sensor_cols.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("split_train", self.split.0.to_string()),
            ("split_test", self.split.1.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.street;
        match key {
            "height" => s.height = parse_num(key, v)?,
            "width" => s.width = parse_num(key, v)?,
            "n_pairs" => s.n_pairs = parse_num(key, v)?,
            "u_adv" => s.u_adv = parse_num(key, v)?,
            "sigma" => s.sigma = parse_num(key, v)?,
            "amplitude" => s.amplitude = parse_num(key, v)?,
            "spacing" => s.spacing = parse_num(key, v)?,
            "steps" => s.steps = parse_num(key, v)?,
            "data_seed" => s.seed = parse_num(key, v)?,
            "sensor_rows" => self.sensor_rows = parse_num(key, v)?,
            "sensor_cols" => self.sensor_cols = parse_num(key, v)?,
            "noise_std" => self.noise_std = parse_num(key, v)?,
            "split_train" => self.split.0 = parse_num(key, v)?,
            "split_test" => self.split.1 = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown data setting {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.street.validate()?;
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std must be finite and non-negative, got {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<SensorLayout> {
        SensorLayout::uniform(self.street.height, self.street.width, self.sensor_rows, self.sensor_cols)
    }

    pub fn noise(&self) -> Option<SensorNoise> {
        (self.noise_std > 0.0).then_some(SensorNoise {
            std: self.noise_std,
            seed: self.street.seed,
        })
    }

    /// Wraps existing snapshots with this config's noise and split.
    pub fn assemble(&self, snaps: &[FieldSnapshot], layout: SensorLayout) -> Result<(Dataset, DatasetSplit)> {
        self.validate()?;
        let data = Dataset::new(snaps, layout, self.noise())?;
        let split = make_split(data.len(), self.split)?;
        Ok((data, split))
    }

    /// Generates the fields and samples them.
    pub fn build(&self) -> Result<(Dataset, DatasetSplit)> {
        self.validate()?;
        self.assemble(&generate_vortex_street(&self.street)?, self.layout()?)
    }
}
