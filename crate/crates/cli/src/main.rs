use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use frmamba::data::{read_archive, write_archive, DataConfig, Dataset, DatasetSplit, FieldSnapshot, SensorLayout};
use frmamba::model::{Checkpoint, FrMamba, ModelConfig};
use frmamba::traineval::{
    ablate, evaluate, export_error_maps, reconstructors, AblationGrid, Reconstructor, ReconstructorArgs, TrainConfig,
    Trainer,
};
use frmamba::{Error, Tensor};

const FIELDS: &str = "fields.ffr";
const SENSORS: &str = "sensors.txt";
const DATA_CFG: &str = "data.cfg";

#[derive(Parser)]
#[command(name = "frmamba", version, about = "Field reconstruction from sparse sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vortex-street dataset.
    GenerateData {
        /// Output directory for fields.ffr, sensors.txt and data.cfg.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train a model and write checkpoints plus loss curves.
    Train {
        #[command(flatten)]
        input: DataInput,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; --epochs counts the additional epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Score a reconstruction method on the test intervals.
    Evaluate {
        #[command(flatten)]
        input: DataInput,
        #[command(flatten)]
        method: MethodArgs,
        /// Write the CSV report here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Reconstruct full fields for chosen steps into an FFR1 archive.
    Reconstruct {
        #[command(flatten)]
        input: DataInput,
        #[command(flatten)]
        method: MethodArgs,
        /// Steps to reconstruct: `test` (default), `a..b` or a comma-separated list.
        #[arg(long, default_value = "test")]
        select: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train the depth/state grid and the branch ablations.
    Ablate {
        #[command(flatten)]
        input: DataInput,
        /// Output directory for ablation.csv and ablation.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
        layers: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
        states: Vec<usize>,
        /// Skip the depth × state-size table.
        #[arg(long)]
        branches_only: bool,
        /// Skip the branch table.
        #[arg(long)]
        depth_only: bool,
        /// Train every configuration once per seed and report the mean.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Write truth, reconstruction and |error| graymaps for test steps.
    ExportErrorMaps {
        #[command(flatten)]
        input: DataInput,
        #[command(flatten)]
        method: MethodArgs,
        /// Test steps to export; defaults to the first step of each interval.
        #[arg(long)]
        select: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(Args)]
struct DataInput {
    /// Dataset directory written by generate-data.
    #[arg(long)]
    data: PathBuf,
    /// Sensor layout file ("row,col" per line) replacing the stored one.
    #[arg(long)]
    sensors: Option<PathBuf>,
}

#[derive(Args)]
struct MethodArgs {
    /// Reconstruction method; `--method list` shows the choices.
    #[arg(long, default_value = "frmamba")]
    method: String,
    /// Checkpoint for the frmamba method.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

macro_rules! setting_flags {
    ($($heading:literal => { $($field:ident),* $(,)? })*) => {
        /// Flags mirroring the data, model and training settings. Any of
        /// them may also come from `--config`.
        #[derive(Args, Default)]
        struct Settings {
            /// Flat key=value file; command-line flags take precedence.
            #[arg(long)]
            config: Option<PathBuf>,
            $($(
                #[arg(long, value_name = "V", help_heading = $heading)]
                $field: Option<String>,
            )*)*
        }

        impl Settings {
            fn flags(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $($(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field).to_string(), v.clone()));
                    }
                )*)*
                out
            }
        }
    };
}

setting_flags! {
    "Data" => {
        height, width, n_pairs, u_adv, sigma, amplitude, spacing, steps, data_seed,
        sensor_rows, sensor_cols, noise_std, split_train, split_test,
    }
    "Model" => {
        n_layer, d_model, d_state, fno_width, fno_modes, fno_layers, fno2d_layers,
        fno2d_modes_h, fno2d_modes_w, channels, n_sensors, conv_k, seed, bias, fno1d, fno2d,
        prenorm, activation,
    }
    "Training" => {
        epochs, batch_size, window, lr, beta1, beta2, eps, weight_decay, clip, train_seed,
        windows_per_epoch, eval_every, checkpoint_every,
    }
}

/// Resolved configuration of one invocation.
struct Config {
    data: DataConfig,
    model: ModelConfig,
    train: TrainConfig,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected key=value, got {line:?}", path.display(), i + 1))
        })?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    /// Layers, lowest precedence first: the dataset's stored settings,
    /// `--config`, then explicit flags.
    fn resolve(data_dir: Option<&Path>, settings: &Settings) -> Result<Self> {
        let mut merged = BTreeMap::new();
        if let Some(dir) = data_dir {
            let stored = dir.join(DATA_CFG);
            if stored.exists() {
                merged.extend(read_pairs(&stored)?);
            }
        }
        if let Some(path) = &settings.config {
            merged.extend(read_pairs(path)?);
        }
        merged.extend(settings.flags());

        let mut cfg = Config {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        };
        let data_keys: Vec<_> = cfg.data.to_pairs().into_iter().map(|(k, _)| k).collect();
        let model_keys: Vec<_> = cfg.model.to_pairs().into_iter().map(|(k, _)| k).collect();
        let train_keys: Vec<_> = cfg.train.to_pairs().into_iter().map(|(k, _)| k).collect();
        for (k, v) in &merged {
            let mut known = false;
            if data_keys.contains(&k.as_str()) {
                cfg.data.set(k, v)?;
                known = true;
            }
            if model_keys.contains(&k.as_str()) {
                cfg.model.set(k, v)?;
                known = true;
            }
            if train_keys.contains(&k.as_str()) {
                cfg.train.set(k, v)?;
                known = true;
            }
            if !known {
                return Err(Error::Config(format!("unknown setting {k:?}")).into());
            }
        }
        Ok(cfg)
    }

    fn describe(&self) -> String {
        let mut s = String::from("# data\n");
        s.push_str(&self.data.to_text());
        s.push_str("# model\n");
        s.push_str(&self.model.to_text());
        s.push_str("# training\n");
        for (k, v) in self.train.to_pairs() {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

/// Loads the stored dataset and points the model config at its geometry.
fn load_data(input: &DataInput, cfg: &mut Config) -> Result<(Arc<Dataset>, DatasetSplit)> {
    let fields = input.data.join(FIELDS);
    let snaps = read_archive(&fields).with_context(|| format!("loading {}", fields.display()))?;
    let layout_path = input.sensors.clone().unwrap_or_else(|| input.data.join(SENSORS));
    let layout = SensorLayout::load(&layout_path)?;
    let (data, split) = cfg.data.assemble(&snaps, layout)?;
    cfg.model.height = data.height;
    cfg.model.width = data.width;
    cfg.model.channels = 1;
    cfg.model.n_sensors = data.n_sensors();
    Ok((Arc::new(data), split))
}

fn parse_steps(spec: &str, split: &DatasetSplit) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse steps {spec:?}; use `test`, `a..b` or `a,b,c`"));
    let spec = spec.trim();
    if spec == "test" {
        return Ok(split.test.clone().collect());
    }
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    Ok(spec
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?)
}

fn check_steps(steps: &[usize], range: &std::ops::Range<usize>, what: &str) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Config("no steps selected".into()).into());
    }
    if let Some(t) = steps.iter().find(|t| !range.contains(t)) {
        return Err(Error::Config(format!("step {t} is outside the {what} range {}..{}", range.start, range.end)).into());
    }
    Ok(())
}

fn make_method(
    method: &MethodArgs,
    data: &Arc<Dataset>,
    split: &DatasetSplit,
    cfg: &Config,
) -> Result<Box<dyn Reconstructor>> {
    let registry = reconstructors();
    let args = ReconstructorArgs {
        data: Arc::clone(data),
        split: split.clone(),
        checkpoint: method.checkpoint.clone(),
        window: cfg.train.window,
    };
    Ok(registry.create(&method.method, &args)?)
}

fn list_methods() {
    for (name, about) in reconstructors().describe() {
        println!("{name:<12} {about}");
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn generate_data(out: &Path, settings: &Settings) -> Result<()> {
    let cfg = Config::resolve(None, settings)?;
    cfg.data.validate()?;
    let layout = cfg.data.layout()?;
    let snaps = frmamba::data::generate_vortex_street(&cfg.data.street)?;
    // Fail before writing anything if the split cannot be formed.
    cfg.data.assemble(&snaps, layout.clone())?;
    create_dir(out)?;
    write_archive(&snaps, &out.join(FIELDS))?;
    layout.save(&out.join(SENSORS))?;
    write_file(&out.join(DATA_CFG), &cfg.data.to_text())?;
    println!(
        "wrote {} snapshots of {}x{} and {} sensors to {}",
        snaps.len(),
        cfg.data.street.height,
        cfg.data.street.width,
        layout.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(input: &DataInput, out: &Path, resume: Option<&Path>, settings: &Settings) -> Result<()> {
    let mut cfg = Config::resolve(Some(&input.data), settings)?;
    let (data, split) = load_data(input, &mut cfg)?;
    let (mut model, state) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            (FrMamba::from_checkpoint(&ckpt)?, Some((ckpt.optimizer, ckpt.rng)))
        }
        None => (FrMamba::new(cfg.model.clone())?, None),
    };
    cfg.model = model.config.clone();
    create_dir(out)?;
    write_file(&out.join("run.cfg"), &cfg.describe())?;
    println!(
        "training {} parameters for {} epochs of {} steps",
        model.params.num_scalars(),
        cfg.train.epochs,
        cfg.train.steps_per_epoch(&split)
    );
    let every = cfg.train.checkpoint_every;
    let mut trainer = match state {
        Some((opt, rng)) => Trainer::resume(&mut model, &data, &split, cfg.train.clone(), opt, rng)?,
        None => Trainer::new(&mut model, &data, &split, cfg.train.clone())?,
    };
    trainer.run(&mut |s, t| {
        let mae = s.test_mae.map(|m| format!("  test MAE {m:.4e}")).unwrap_or_default();
        println!("epoch {:>3}  loss {:.4e}{mae}  {:.1}s", s.epoch, s.train_loss, s.elapsed_s);
        if every > 0 && s.epoch % every == 0 {
            t.checkpoint().save(&out.join(format!("epoch{:04}.frmb", s.epoch)))?;
        }
        Ok(())
    })?;
    let ckpt = trainer.checkpoint();
    let report = trainer.into_report();
    ckpt.save(&out.join("model.frmb"))?;
    write_file(&out.join("loss.csv"), &report.to_csv())?;
    let mut steps = String::from("step,loss\n");
    for (i, l) in report.step_losses.iter().enumerate() {
        steps.push_str(&format!("{},{l}\n", i + 1));
    }
    write_file(&out.join("step_loss.csv"), &steps)?;
    println!("wrote {}", out.join("model.frmb").display());
    Ok(())
}

fn evaluate_cmd(input: &DataInput, method: &MethodArgs, csv: Option<&Path>, settings: &Settings) -> Result<()> {
    if method.method == "list" {
        list_methods();
        return Ok(());
    }
    let mut cfg = Config::resolve(Some(&input.data), settings)?;
    let (data, split) = load_data(input, &mut cfg)?;
    let recon = make_method(method, &data, &split, &cfg)?;
    let report = evaluate(recon.as_ref(), &data, &split)?;
    print!("{}", report.to_text());
    if let Some(path) = csv {
        write_file(path, &report.to_csv())?;
    }
    Ok(())
}

fn reconstruct_cmd(input: &DataInput, method: &MethodArgs, steps: &str, out: &Path, settings: &Settings) -> Result<()> {
    let mut cfg = Config::resolve(Some(&input.data), settings)?;
    let (data, split) = load_data(input, &mut cfg)?;
    let steps = parse_steps(steps, &split)?;
    check_steps(&steps, &(0..data.len()), "dataset")?;
    let recon = make_method(method, &data, &split, &cfg)?;
    let values = recon.reconstruct(&data, &steps)?;
    let n = data.frame_len();
    let snaps = steps
        .iter()
        .zip(values.chunks_exact(n))
        .map(|(&t, v)| {
            Ok(FieldSnapshot {
                t_index: t,
                field: Tensor::new(&[data.height, data.width], v.to_vec())?,
            })
        })
        .collect::<frmamba::Result<Vec<_>>>()?;
    write_archive(&snaps, out)?;
    println!("wrote {} fields to {}", snaps.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ablate_cmd(
    input: &DataInput,
    out: &Path,
    layers: &[usize],
    states: &[usize],
    branches_only: bool,
    depth_only: bool,
    seeds: &[u64],
    settings: &Settings,
) -> Result<()> {
    let mut cfg = Config::resolve(Some(&input.data), settings)?;
    let (data, split) = load_data(input, &mut cfg)?;
    let mut grid = AblationGrid {
        layers: layers.to_vec(),
        states: states.to_vec(),
        seeds: seeds.to_vec(),
        ..AblationGrid::default()
    };
    if branches_only {
        grid.layers.clear();
    }
    if depth_only {
        grid.branches.clear();
    }
    create_dir(out)?;
    write_file(&out.join("run.cfg"), &cfg.describe())?;
    let table = ablate(&cfg.model, &cfg.train, &data, &split, &grid, &mut |r| {
        println!(
            "n_layer={} d_state={} fno1d={} fno2d={}  MAE {:.4e}  Max-AE {:.4e}",
            r.n_layer, r.d_state, r.fno1d, r.fno2d, r.mae, r.max_ae
        );
    })?;
    write_file(&out.join("ablation.csv"), &table.to_csv())?;
    write_file(&out.join("ablation.txt"), &table.to_text())?;
    print!("\n{}", table.to_text());
    Ok(())
}

fn export_cmd(
    input: &DataInput,
    method: &MethodArgs,
    steps: Option<&str>,
    out: &Path,
    settings: &Settings,
) -> Result<()> {
    let mut cfg = Config::resolve(Some(&input.data), settings)?;
    let (data, split) = load_data(input, &mut cfg)?;
    let steps = match steps {
        Some(spec) => parse_steps(spec, &split)?,
        None => split.intervals.iter().map(|r| r.start).collect(),
    };
    check_steps(&steps, &split.test, "test")?;
    let recon = make_method(method, &data, &split, &cfg)?;
    let written = export_error_maps(recon.as_ref(), &data, &steps, out)?;
    println!("wrote error maps for {} steps to {}", written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData { out, settings } => generate_data(out, settings),
        Command::Train {
            input,
            out,
            resume,
            settings,
        } => train_cmd(input, out, resume.as_deref(), settings),
        Command::Evaluate {
            input,
            method,
            csv,
            settings,
        } => evaluate_cmd(input, method, csv.as_deref(), settings),
        Command::Reconstruct {
            input,
            method,
            select,
            out,
            settings,
        } => reconstruct_cmd(input, method, select, out, settings),
        Command::Ablate {
            input,
            out,
            layers,
            states,
            branches_only,
            depth_only,
            seeds,
            settings,
        } => ablate_cmd(input, out, layers, states, *branches_only, *depth_only, seeds, settings),
        Command::ExportErrorMaps {
            input,
            method,
            select,
            out,
            settings,
        } => export_cmd(input, method, select.as_deref(), out, settings),
    }
}

/// 2 for configuration errors, 3 for numerical divergence, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        Some(e) if e.is_divergence() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
