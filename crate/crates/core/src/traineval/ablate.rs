use std::fmt::Write as _;

use crate::data::{Dataset, DatasetSplit};
use crate::error::Result;
use crate::model::{FrMamba, ModelConfig};

use super::eval::{evaluate, ModelReconstructor};
use super::train::{train, TrainConfig};

/// Configurations to sweep. Every run shares the base model config,
/// training budget and seeds; only the listed fields change.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    /// Depth values of the depth × state-size table.
    pub layers: Vec<usize>,
    /// State sizes of the depth × state-size table.
    pub states: Vec<usize>,
    /// `(fno1d, fno2d)` switches of the branch table.
    pub branches: Vec<(bool, bool)>,
    /// Each configuration is trained once per seed (model and sampler
    /// alike) and scored by the mean. Empty keeps the base seeds.
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            layers: vec![5, 10, 20],
            states: vec![8, 16, 32],
            branches: vec![(false, false), (true, false), (false, true), (true, true)],
            seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub n_layer: usize,
    pub d_state: usize,
    pub fno1d: bool,
    pub fno2d: bool,
    /// Means over the seeds.
    pub mae: f64,
    pub max_ae: f64,
    pub final_train_loss: f64,
    /// Test MAE of each seed, in grid order.
    pub seed_maes: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub depth_state: Vec<AblationRow>,
    pub branches: Vec<AblationRow>,
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "--"
    }
}

impl AblationTable {
    pub fn branch(&self, fno1d: bool, fno2d: bool) -> Option<&AblationRow> {
        self.branches.iter().find(|r| (r.fno1d, r.fno2d) == (fno1d, fno2d))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,n_layer,d_state,fno1d,fno2d,mae,max_ae,train_loss,seed_maes\n");
        for (table, rows) in [("depth_state", &self.depth_state), ("branches", &self.branches)] {
            for r in rows {
                let seeds: Vec<String> = r.seed_maes.iter().map(|m| format!("{m:e}")).collect();
                let _ = writeln!(
                    s,
                    "{table},{},{},{},{},{:e},{:e},{:e},{}",
                    r.n_layer,
                    r.d_state,
                    r.fno1d,
                    r.fno2d,
                    r.mae,
                    r.max_ae,
                    r.final_train_loss,
                    seeds.join(";")
                );
            }
        }
        s
    }

    /// Depth rows × state-size column groups, then the branch switches.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.depth_state.is_empty() {
            let mut layers: Vec<usize> = self.depth_state.iter().map(|r| r.n_layer).collect();
            layers.dedup();
            let mut states: Vec<usize> = self.depth_state.iter().map(|r| r.d_state).collect();
            states.sort_unstable();
            states.dedup();
            let _ = write!(s, "{:>7}", "N_layer");
            for n in &states {
                let _ = write!(s, " | {:^23}", format!("D = {n}"));
            }
            let _ = write!(s, "\n{:>7}", "");
            for _ in &states {
                let _ = write!(s, " | {:>11} {:>11}", "MAE", "Max-AE");
            }
            s.push('\n');
            for l in &layers {
                let _ = write!(s, "{l:>7}");
                for n in &states {
                    match self.depth_state.iter().find(|r| r.n_layer == *l && r.d_state == *n) {
                        Some(r) => {
                            let _ = write!(s, " | {:>11.4e} {:>11.4e}", r.mae, r.max_ae);
                        }
                        None => {
                            let _ = write!(s, " | {:>11} {:>11}", "-", "-");
                        }
                    }
                }
                s.push('\n');
            }
            s.push('\n');
        }
        if !self.branches.is_empty() {
            let _ = writeln!(s, "{:>5} {:>5} {:>11} {:>11}", "FNO1d", "FNO2d", "MAE", "Max-AE");
            for r in &self.branches {
                let _ = writeln!(
                    s,
                    "{:>5} {:>5} {:>11.4e} {:>11.4e}",
                    mark(r.fno1d),
                    mark(r.fno2d),
                    r.mae,
                    r.max_ae
                );
            }
        }
        s
    }
}

fn run_one(
    cfg: ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    split: &DatasetSplit,
    seeds: &[u64],
) -> Result<AblationRow> {
    let runs: Vec<(ModelConfig, TrainConfig)> = if seeds.is_empty() {
        vec![(cfg.clone(), train_cfg.clone())]
    } else {
        seeds
            .iter()
            .map(|&seed| (ModelConfig { seed, ..cfg.clone() }, TrainConfig { seed, ..train_cfg.clone() }))
            .collect()
    };
    let (mut mae, mut max_ae, mut loss) = (0.0, 0.0, 0.0);
    let mut seed_maes = Vec::with_capacity(runs.len());
    for (mc, tc) in runs {
        let mut model = FrMamba::new(mc)?;
        let (report, _) = train(&mut model, data, split, &tc)?;
        let eval = evaluate(&ModelReconstructor::new(model, tc.window), data, split)?;
        mae += eval.avg_mae;
        max_ae += eval.avg_max_ae;
        loss += report.epoch_losses.last().copied().unwrap_or(f64::NAN);
        seed_maes.push(eval.avg_mae);
    }
    let k = seed_maes.len() as f64;
    Ok(AblationRow {
        n_layer: cfg.n_layer,
        d_state: cfg.d_state,
        fno1d: cfg.fno1d,
        fno2d: cfg.fno2d,
        mae: mae / k,
        max_ae: max_ae / k,
        final_train_loss: loss / k,
        seed_maes,
    })
}

/// Trains and scores every grid configuration under one shared budget.
pub fn ablate(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    split: &DatasetSplit,
    grid: &AblationGrid,
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for &n_layer in &grid.layers {
        for &d_state in &grid.states {
            let cfg = ModelConfig {
                n_layer,
                d_state,
                ..base.clone()
            };
            let row = run_one(cfg, train_cfg, data, split, &grid.seeds)?;
            on_row(&row);
            table.depth_state.push(row);
        }
    }
    for &(fno1d, fno2d) in &grid.branches {
        let cfg = ModelConfig {
            fno1d,
            fno2d,
            ..base.clone()
        };
        let row = run_one(cfg, train_cfg, data, split, &grid.seeds)?;
        on_row(&row);
        table.branches.push(row);
    }
    Ok(table)
}
