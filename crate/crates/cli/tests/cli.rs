use std::path::Path;
use std::process::{Command, Output};

fn frmamba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frmamba")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = frmamba(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--height", "8", "--width", "8", "--spacing", "8", "--n-pairs", "1", "--sigma", "1.5",
    "--steps", "200", "--sensor-rows", "2", "--sensor-cols", "2",
];

const TINY: &[&str] = &[
    "--n-layer", "1", "--d-model", "4", "--d-state", "2", "--fno-width", "4", "--fno-modes", "2",
    "--fno-layers", "1", "--fno2d-layers", "1", "--fno2d-modes-h", "2", "--fno2d-modes-w", "2",
    "--conv-k", "2", "--epochs", "2", "--window", "16", "--windows-per-epoch", "2",
];

#[test]
fn generate_train_evaluate_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&[&["generate-data", "--out", s(&data)], SMALL].concat());
    for f in ["fields.ffr", "sensors.txt", "data.cfg"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let log = ok(&[&["train", "--data", s(&data), "--out", s(&run)], TINY].concat());
    assert!(log.contains("epoch"), "{log}");
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    let ckpt = run.join("model.frmb");

    let csv = run.join("eval.csv");
    let report = ok(&[
        "evaluate", "--data", s(&data), "--checkpoint", s(&ckpt), "--csv", s(&csv),
    ]);
    assert!(report.contains("average"), "{report}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);

    let methods = ok(&["evaluate", "--data", s(&data), "--method", "list"]);
    for m in ["frmamba", "persistence", "linear-lsq", "oracle", "zero"] {
        assert!(methods.contains(m));
    }

    let recon = run.join("recon.ffr");
    ok(&[
        "reconstruct", "--data", s(&data), "--checkpoint", s(&ckpt), "--select", "160..163", "--out", s(&recon),
    ]);
    let bytes = std::fs::read(&recon).unwrap();
    assert_eq!(bytes.len(), 18 + 3 * 64 * 8);

    let maps = run.join("maps");
    ok(&["export-error-maps", "--data", s(&data), "--method", "oracle", "--out", s(&maps)]);
    let pgms = std::fs::read_dir(&maps)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 5 * 3);

    // Resuming continues the step count.
    let more = dir.path().join("more");
    ok(&[
        &["train", "--data", s(&data), "--out", s(&more), "--resume", s(&ckpt)],
        TINY,
    ]
    .concat());
    assert!(more.join("model.frmb").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[&["generate-data", "--out", s(&data)], SMALL].concat());

    let out = frmamba(&[&["train", "--data", s(&data), "--out", s(&dir.path().join("r"))], TINY, &["--window", "9999"]].concat());
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "not_a_setting=1\n").unwrap();
    let out = frmamba(&["evaluate", "--data", s(&data), "--method", "zero", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_setting"));

    let out = frmamba(&["evaluate", "--data", s(&data), "--method", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = frmamba(&["export-error-maps", "--data", s(&data), "--method", "oracle", "--select", "3", "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = frmamba(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.cfg");
    std::fs::write(&cfg, "height=8\nwidth=8\nspacing=8\nsigma=1.5\nn_pairs=1\nsteps=300\nsensor_rows=2\nsensor_cols=2\n").unwrap();
    let data = dir.path().join("data");
    ok(&["generate-data", "--out", s(&data), "--config", s(&cfg), "--steps", "100"]);
    let written = std::fs::read_to_string(data.join("data.cfg")).unwrap();
    assert!(written.contains("steps=100") && written.contains("height=8"), "{written}");
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[&["generate-data", "--out", s(&data)], SMALL].concat());
    let out = frmamba(&[
        &["train", "--data", s(&data), "--out", s(&dir.path().join("r"))],
        TINY,
        &["--lr", "1e300"],
    ]
    .concat());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}
