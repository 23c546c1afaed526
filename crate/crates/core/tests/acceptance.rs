//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p frmamba-core --release --test acceptance`.

mod common;

use std::f64::consts::LN_2;
use std::time::Instant;

use num_complex::Complex64;

use common::{probe_loss, repeat_in_time, scan, taylor_gain, tiny_config, uniform};
use frmamba::data::{decode_archive, encode_archive, DataConfig, Dataset, DatasetSplit, FieldSnapshot};
use frmamba::fno::{Activation, Fno2d, FnoStack};
use frmamba::model::{fuse, Checkpoint, FrMamba, ModelConfig};
use frmamba::nn::{Bound, ParamStore};
use frmamba::rng::SplitRng;
use frmamba::spectral::diff::{irdft2_modes, irdft_modes, mode_mix, rdft2_modes, rdft_modes};
use frmamba::spectral::{dft1d, dft2d, energy, idft1d, real_part};
use frmamba::ssm::{scan_as_convolution, selective_scan, zoh_gain, zoh_input, zoh_transition, DiscreteSsm, SelectiveSsm};
use frmamba::tensor::ops::UnaryOp;
use frmamba::tensor::{all_probes, check_gradients};
use frmamba::traineval::{
    ablate, evaluate, mae_loss, train, AblationGrid, AblationRow, AblationTable, LinearLsq, MeanField,
    ModelReconstructor, Reconstructor, TrainConfig, TrainReport,
};
use frmamba::{Result, Tape, Tensor, Var};

type Outcome = Result<(bool, String)>;

fn cmax(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn scan_convolution() -> Outcome {
    let (b, l, m, n) = (2, 64, 4, 8);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let ab = repeat_in_time(b, l, &[m, n], 1000 + seed, 0.0, 0.99);
        let bb = repeat_in_time(b, l, &[m, n], 2000 + seed, -1.0, 1.0);
        let c = repeat_in_time(b, l, &[n], 3000 + seed, -1.0, 1.0);
        let x = uniform(4000 + seed, &[b, l, m], -1.0, 1.0);
        let conv = scan_as_convolution(&ab, &bb, &c, &x)?;
        worst = worst.max(conv.max_abs_diff(&scan(&ab, &bb, &c, &x)));
    }
    Ok((worst < 1e-10, format!("max |scan − conv| = {worst:.2e} over 20 seeds")))
}

fn zoh() -> Outcome {
    let exact = (zoh_gain(-1.0, LN_2) - 0.5).abs();
    let a_bar = ((LN_2 * -1.0f64).exp() - 0.5).abs();
    let mut worst: f64 = 0.0;
    for i in 0..=60 {
        let mag = 10f64.powf(-12.0 + 6.0 * i as f64 / 60.0);
        for a in [mag, -mag] {
            for delta in [1e-3, 0.1, 1.0, 3.0] {
                let oracle = taylor_gain(a, delta);
                worst = worst.max(((zoh_gain(a, delta) - oracle) / oracle).abs());
            }
        }
    }
    let pass = exact <= 1e-15 && a_bar <= 1e-15 && worst <= 1e-12;
    Ok((pass, format!("closed form err {exact:.1e}, small-|a| rel err {worst:.2e}")))
}

fn spectral() -> Outcome {
    let (mut round, mut parseval, mut hermitian) = (0.0f64, 0.0f64, true);
    for (seed, n) in [(1u64, 7usize), (2, 16), (3, 31), (4, 64), (5, 100)] {
        let x = uniform(seed, &[n], -2.0, 2.0);
        let s = dft1d(&x)?;
        round = round.max(real_part(&idft1d(&s, n)?).max_abs_diff(&x));
        parseval = parseval.max((energy(&x) - energy(&s.coeffs) / n as f64).abs());
        let c = s.coeffs.cdata();
        hermitian &= c[0].im == 0.0 && (1..n).all(|k| c[k] == c[n - k].conj());
    }
    let (h, w) = (6, 9);
    let x = uniform(6, &[h, w], -1.0, 1.0);
    let s = dft2d(&x)?;
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let line = Tensor::new(&[w], x.data()[r * w..][..w].to_vec())?;
        rows[r * w..][..w].copy_from_slice(dft1d(&line)?.coeffs.cdata());
    }
    let cols = dft1d(&Tensor::new_complex(&[h, w], rows)?)?;
    let sep = cmax(cols.coeffs.cdata(), s.coeffs.cdata());
    let c2 = s.coeffs.cdata();
    hermitian &= (0..h).all(|r| (0..w).all(|k| c2[r * w + k] == c2[(h - r) % h * w + (w - k) % w].conj()));
    let pass = round < 1e-12 && parseval < 1e-10 && sep < 1e-12 && hermitian;
    Ok((
        pass,
        format!("roundtrip {round:.1e}, Parseval {parseval:.1e}, separability {sep:.1e}, Hermitian exact: {hermitian}"),
    ))
}

const H: f64 = 1e-6;

fn gradcheck<F>(inputs: &[Tensor], probes: &[(usize, usize)], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    Ok(check_gradients(inputs, probes, H, f)?.rel_error)
}

fn full<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    gradcheck(inputs, &all_probes(inputs), f)
}

/// Store parameters first, then `extra`.
fn with_store<F>(store: &ParamStore, extra: &[Tensor], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let np = store.len();
    let mut inputs: Vec<Tensor> = store.tensors().cloned().collect();
    inputs.extend_from_slice(extra);
    full(&inputs, |tape, vars| f(tape, &Bound::from_vars(vars[..np].to_vec()), &vars[np..]))
}

fn gradients() -> Outcome {
    let mut errs: Vec<(&str, f64)> = Vec::new();
    for op in UnaryOp::ALL {
        let (lo, hi) = match op {
            UnaryOp::Reciprocal => (0.5, 2.0),
            UnaryOp::Log1p => (-0.5, 2.0),
            _ => (-2.0, 2.0),
        };
        let x = uniform(1, &[3, 4], lo, hi);
        errs.push(("unary", full(&[x], |t, v| probe_loss(t, v[0].unary(op), 7))?));
    }
    let a = uniform(1, &[2, 3, 4], -2.0, 2.0);
    let b = uniform(2, &[4], -2.0, 2.0);
    let c = uniform(3, &[3, 1], -2.0, 2.0);
    errs.push(("add", full(&[a.clone(), b.clone()], |t, v| probe_loss(t, v[0].add(v[1])?, 1))?));
    errs.push(("sub", full(&[a.clone(), c.clone()], |t, v| probe_loss(t, v[0].sub(v[1])?, 2))?));
    errs.push(("mul", full(&[a.clone(), c], |t, v| probe_loss(t, v[0].mul(v[1])?, 3))?));
    errs.push(("scale", full(&[a.clone()], |t, v| probe_loss(t, v[0].scale(-1.7), 4))?));
    errs.push(("sum/mean", full(&[a.clone()], |_, v| v[0].sum().add(v[0].mul(v[0])?.mean()))?));
    errs.push(("reshape", full(&[a.clone()], |t, v| probe_loss(t, v[0].reshape(&[6, 4])?, 5))?));
    errs.push(("narrow", full(&[a.clone()], |t, v| probe_loss(t, v[0].narrow(1, 1, 2)?, 6))?));
    let wm = uniform(4, &[4, 5], -2.0, 2.0);
    let bias = uniform(5, &[5], -2.0, 2.0);
    errs.push(("matmul", full(&[a.clone(), wm.clone()], |t, v| probe_loss(t, v[0].matmul(v[1])?, 7))?));
    errs.push(("linear", full(&[a, wm, bias], |t, v| probe_loss(t, v[0].linear(v[1], Some(v[2]))?, 8))?));

    let x = uniform(6, &[2, 6, 3], -2.0, 2.0);
    let k = uniform(7, &[3, 4], -2.0, 2.0);
    let g = uniform(8, &[3], 0.5, 2.0);
    errs.push(("conv1d_causal", full(&[x.clone(), k], |t, v| probe_loss(t, v[0].conv1d_causal(v[1])?, 9))?));
    errs.push(("rms_norm", full(&[x, g], |t, v| probe_loss(t, v[0].rms_norm(v[1], 1e-6)?, 10))?));

    let x = uniform(9, &[1, 7, 2], -2.0, 2.0);
    let wr = uniform(10, &[4, 2, 2], -1.0, 1.0);
    let wi = uniform(11, &[4, 2, 2], -1.0, 1.0);
    errs.push((
        "spectral 1d",
        full(&[x, wr, wi], |t, v| {
            let spec = mode_mix(rdft_modes(v[0], 4)?, Var::complex(v[1], v[2])?)?;
            probe_loss(t, irdft_modes(spec, 7)?, 11)
        })?,
    ));
    let x = uniform(12, &[1, 6, 5, 2], -2.0, 2.0);
    let wr = uniform(13, &[6, 2, 2], -1.0, 1.0);
    let wi = uniform(14, &[6, 2, 2], -1.0, 1.0);
    errs.push((
        "spectral 2d",
        full(&[x, wr, wi], |t, v| {
            let spec = rdft2_modes(v[0], 2, 3)?.reshape(&[1, 6, 2])?;
            let mixed = mode_mix(spec, Var::complex(v[1], v[2])?)?.reshape(&[1, 2, 3, 2])?;
            probe_loss(t, irdft2_modes(mixed, 6, 5)?, 12)
        })?,
    ));

    let a = uniform(15, &[2, 3], -3.0, -0.1);
    let delta = uniform(16, &[1, 5, 2], 0.05, 1.5);
    let b_t = uniform(17, &[1, 5, 3], -1.0, 1.0);
    let c_t = uniform(18, &[1, 5, 3], -1.0, 1.0);
    let x = uniform(19, &[1, 5, 2], -1.0, 1.0);
    errs.push((
        "zoh + scan",
        full(&[a, delta, b_t, c_t, x], |t, v| {
            let d = DiscreteSsm {
                a_bar: zoh_transition(v[0], v[1])?,
                b_bar: zoh_input(v[0], v[1], v[2])?,
            };
            probe_loss(t, selective_scan(&d, v[3], v[4])?, 13)
        })?,
    ));

    let p = uniform(20, &[2, 3, 4], -2.0, 2.0);
    let y = uniform(21, &[2, 3, 4], -2.0, 2.0);
    errs.push(("mae_loss", full(&[p, y], |_, v| mae_loss(v[0], v[1]))?));
    let ins: Vec<Tensor> = (0..4).map(|i| uniform(30 + i, &[2, 3, 4], -2.0, 2.0)).collect();
    errs.push(("fuse", full(&ins, |t, v| probe_loss(t, fuse(v[0], Some(v[1]), v[2], v[3])?, 14))?));

    let mut rng = SplitRng::new(1);
    let mut store = ParamStore::new();
    let stack = FnoStack::new(&mut store, "fno", 2, 3, 4, true, Activation::Silu, &mut rng);
    let x = uniform(40, &[2, 3, 6], -2.0, 2.0);
    errs.push(("fno1d", with_store(&store, &[x], |t, p, v| probe_loss(t, stack.forward(p, v[0])?, 15))?));
    let mut store = ParamStore::new();
    let f2 = Fno2d::new(&mut store, "refine", 1, 1, (2, 2), 3, true, Activation::Gelu, &mut rng);
    let u = uniform(41, &[2, 4, 5, 1], -2.0, 2.0);
    errs.push(("fno2d", with_store(&store, &[u], |t, p, v| probe_loss(t, f2.refine(p, v[0])?, 16))?));
    let mut store = ParamStore::new();
    let ssm = SelectiveSsm::new(&mut store, "ssm", 3, 2, 2, true, &mut rng);
    let x = uniform(42, &[1, 5, 3], -2.0, 2.0);
    errs.push((
        "selective ssm",
        with_store(&store, &[x], |t, p, v| {
            let sel = ssm.selective_embed(p, v[0])?;
            probe_loss(t, ssm.forward(p, &sel)?, 17)
        })?,
    ));

    let (op_name, op_worst) = errs.iter().copied().fold(("", 0.0), |m, e| if e.1 > m.1 { e } else { m });

    let model = FrMamba::new(tiny_config())?;
    let inputs: Vec<Tensor> = model.params.tensors().cloned().collect();
    let all = all_probes(&inputs);
    let want = (all.len() / 100).max(10);
    let mut rng = SplitRng::new(5);
    let mut probes = Vec::with_capacity(want);
    while probes.len() < want {
        let p = all[rng.below(0, all.len())];
        if !probes.contains(&p) {
            probes.push(p);
        }
    }
    let x = uniform(43, &[2, 5, 3], -1.0, 1.0);
    let model_err = gradcheck(&inputs, &probes, |tape, vars| {
        let out = model.forward_on(&Bound::from_vars(vars.to_vec()), tape.constant(x.clone()), false)?;
        probe_loss(tape, out, 99)
    })?;

    Ok((
        op_worst < 1e-5 && model_err < 1e-4,
        format!(
            "{} op checks, worst {op_worst:.1e} ({op_name}); tiny model {want}/{} coords {model_err:.1e}",
            errs.len(),
            all.len()
        ),
    ))
}

fn zero_init() -> Outcome {
    let mut ok = true;
    for (fno1d, fno2d, prenorm) in [(true, true, false), (false, true, false), (true, false, false), (true, true, true)] {
        let cfg = ModelConfig {
            n_layer: 3,
            fno1d,
            fno2d,
            prenorm,
            ..tiny_config()
        };
        let mut model = FrMamba::new(cfg)?;
        model.params.zero_all();
        let e = uniform(8, &[2, 5, 4], -3.0, 3.0);
        let tape = Tape::new();
        let p = model.params.bind(&tape, false);
        for i in 0..3 {
            ok &= model.block_forward(&p, i, tape.constant(e.clone()))?.value().bit_eq(&e);
        }
        ok &= model.forward(&uniform(9, &[2, 5, 3], -1.0, 1.0))?.data().iter().all(|&v| v == 0.0);
    }
    Ok((ok, "4 variants × 3 blocks, bitwise identity and zero output".into()))
}

/// Everything the end-to-end criteria share.
struct Toy {
    data: Dataset,
    split: DatasetSplit,
    model: ModelConfig,
    train: TrainConfig,
}

impl Toy {
    fn new() -> Result<Self> {
        let (data, split) = DataConfig::default().build()?;
        let model = ModelConfig {
            fno_width: 16,
            height: data.height,
            width: data.width,
            n_sensors: data.n_sensors(),
            ..Default::default()
        };
        let train = TrainConfig {
            eval_every: 0,
            ..Default::default()
        };
        Ok(Self { data, split, model, train })
    }
}

struct Trained {
    model: FrMamba,
    report: TrainReport,
    checkpoint: Checkpoint,
    mae: f64,
    max_ae: f64,
}

fn ema(xs: &[f64], n: usize) -> Vec<f64> {
    let alpha = 2.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(xs.len());
    let mut m = xs[0];
    for &x in xs {
        m = alpha * x + (1.0 - alpha) * m;
        out.push(m);
    }
    out
}

fn end_to_end(toy: &Toy, trained: &mut Option<Trained>) -> Outcome {
    let mut model = FrMamba::new(toy.model.clone())?;
    let (report, checkpoint) = train(&mut model, &toy.data, &toy.split, &toy.train)?;
    let recon = ModelReconstructor::new(model, toy.train.window);
    let ours = evaluate(&recon, &toy.data, &toy.split)?;
    let mean = evaluate(&MeanField::fit(&toy.data, toy.split.train.clone())?, &toy.data, &toy.split)?;
    let lsq = evaluate(&LinearLsq::fit(&toy.data, toy.split.train.clone())?, &toy.data, &toy.split)?;
    let pass = ours.avg_mae < 0.2 * mean.avg_mae && ours.avg_mae < 0.2 * lsq.avg_mae;

    let steps = &report.step_losses;
    let first = steps[0];
    let last_epoch = *report.epoch_losses.last().unwrap();
    let smooth = ema(steps, 20);
    let per_epoch = steps.len() / report.epoch_losses.len();
    let (ema_end, ema_epoch1) = (*smooth.last().unwrap(), smooth[per_epoch - 1]);
    println!(
        "  invariant loss reduction: {}  first step {first:.4e} → last epoch {last_epoch:.4e} ({:.1}×)",
        if first / last_epoch >= 10.0 { "PASS" } else { "FAIL" },
        first / last_epoch
    );
    println!(
        "  invariant loss trend: {}  EMA(20) {ema_end:.4e} vs {ema_epoch1:.4e} after epoch 1",
        if ema_end < 0.5 * ema_epoch1 { "PASS" } else { "FAIL" }
    );
    let detail = format!(
        "model MAE {:.4e}, persistence {:.4e}, linear-lsq {:.4e}",
        ours.avg_mae, mean.avg_mae, lsq.avg_mae
    );
    *trained = Some(Trained {
        model: recon.model,
        report,
        checkpoint,
        mae: ours.avg_mae,
        max_ae: ours.avg_max_ae,
    });
    Ok((pass, detail))
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn ablation(toy: &Toy, trained: &Option<Trained>) -> Outcome {
    let trained = trained.as_ref().ok_or_else(|| frmamba::Error::Usage("the end-to-end run failed".into()))?;
    assert_eq!((toy.model.seed, toy.train.seed), (SEEDS[0], SEEDS[0]));
    let grid = |branches, seeds: &[u64]| AblationGrid {
        layers: vec![],
        states: vec![],
        branches,
        seeds: seeds.to_vec(),
    };
    let report = |r: &AblationRow| {
        println!(
            "  fno1d={:<5} fno2d={:<5} seed MAEs {:?}",
            r.fno1d,
            r.fno2d,
            r.seed_maes.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>()
        );
    };
    let single = ablate(
        &toy.model,
        &toy.train,
        &toy.data,
        &toy.split,
        &grid(vec![(true, false), (false, true)], &SEEDS),
        &mut |r| report(r),
    )?;
    // The seed-0 full model is the end-to-end run.
    let rest = ablate(&toy.model, &toy.train, &toy.data, &toy.split, &grid(vec![(true, true)], &SEEDS[1..]), &mut |_| {})?;
    let r = &rest.branches[0];
    let k = SEEDS.len() as f64;
    let mut seed_maes = vec![trained.mae];
    seed_maes.extend(&r.seed_maes);
    let both = AblationRow {
        mae: seed_maes.iter().sum::<f64>() / k,
        max_ae: (trained.max_ae + r.max_ae * (k - 1.0)) / k,
        final_train_loss: (trained.report.epoch_losses.last().unwrap() + r.final_train_loss * (k - 1.0)) / k,
        seed_maes,
        ..r.clone()
    };
    report(&both);
    let mut table = AblationTable {
        depth_state: vec![],
        branches: single.branches,
    };
    table.branches.push(both);
    for line in table.to_text().lines() {
        println!("  {line}");
    }
    let no2d = table.branch(true, false).unwrap().mae;
    let no1d = table.branch(false, true).unwrap().mae;
    let fullm = table.branch(true, true).unwrap().mae;
    Ok((
        fullm <= no1d && fullm <= no2d,
        format!("mean over seeds {SEEDS:?}: full {fullm:.4e}, FNO1d removed {no1d:.4e}, FNO2d removed {no2d:.4e}"),
    ))
}

fn serialization(toy: &Toy, trained: &Option<Trained>) -> Outcome {
    let snaps = (0..50)
        .map(|t| {
            Ok(FieldSnapshot {
                t_index: t,
                field: Tensor::new(&[toy.data.height, toy.data.width], toy.data.frame(t).to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = encode_archive(&snaps)?;
    let ffr = encode_archive(&decode_archive(&bytes)?)? == bytes;

    let trained = trained.as_ref().ok_or_else(|| frmamba::Error::Usage("the end-to-end run failed".into()))?;
    let dir = tempfile::tempdir().map_err(|e| frmamba::Error::Usage(e.to_string()))?;
    let path = dir.path().join("toy.frmb");
    trained.checkpoint.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let frmb = loaded.to_bytes() == trained.checkpoint.to_bytes();
    let steps: Vec<usize> = toy.split.test.clone().step_by(20).collect();
    let before = ModelReconstructor::new(trained.model.clone(), toy.train.window).reconstruct(&toy.data, &steps)?;
    let after = ModelReconstructor::new(FrMamba::from_checkpoint(&loaded)?, toy.train.window).reconstruct(&toy.data, &steps)?;
    let bits = before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((
        ffr && frmb && bits,
        format!(
            "FFR1 {} bytes identical: {ffr}; FRMB {} bytes identical: {frmb}; {} forward outputs bit-identical: {bits}",
            bytes.len(),
            trained.checkpoint.to_bytes().len(),
            before.len()
        ),
    ))
}

fn determinism(toy: &Toy) -> Outcome {
    let cfg = TrainConfig { epochs: 2, ..toy.train.clone() };
    let run = || -> Result<(TrainReport, FrMamba)> {
        let mut model = FrMamba::new(toy.model.clone())?;
        let (report, _) = train(&mut model, &toy.data, &toy.split, &cfg)?;
        Ok((report, model))
    };
    let (ra, ma) = run()?;
    let (rb, mb) = run()?;
    let losses = ra.step_losses.len() == rb.step_losses.len()
        && ra.step_losses.iter().zip(&rb.step_losses).all(|(a, b)| a.to_bits() == b.to_bits());
    let params = ma.params.tensors().zip(mb.params.tensors()).all(|(a, b)| a.bit_eq(b));
    Ok((
        losses && params,
        format!("{} step losses identical: {losses}; parameters identical: {params}", ra.step_losses.len()),
    ))
}

fn main() {
    let toy = match Toy::new() {
        Ok(t) => t,
        Err(e) => {
            println!("toy dataset failed to build: {e}");
            std::process::exit(1);
        }
    };
    let mut trained = None;
    let mut failed = 0;
    let mut report = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n}: {} {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    };
    report(1, &mut scan_convolution);
    report(2, &mut zoh);
    report(3, &mut spectral);
    report(4, &mut gradients);
    report(5, &mut zero_init);
    report(6, &mut || end_to_end(&toy, &mut trained));
    report(7, &mut || ablation(&toy, &trained));
    report(8, &mut || serialization(&toy, &trained));
    report(9, &mut || determinism(&toy));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
