//! Command-line behaviour: exit codes, error messages and reproducible runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn tipseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tipseg"))
        .args(args)
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_intrinsics_names_the_path() {
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("no_such_intrinsics.txt");
    let (mesh, kin) = (fixture("tool.obj"), fixture("tool_kinematics.txt"));
    let o = tipseg(&[
        "render",
        "--mesh",
        &mesh,
        "--kinematics",
        &kin,
        "--intrinsics",
        path(&missing),
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(path(&missing)), "{}", stderr(&o));
    assert!(!out.path().join("mask.pgm").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(tipseg(&["render", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(tipseg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        tipseg(&["crossval", "--epochs", "many"]).status.code(),
        Some(1)
    );
    assert_eq!(tipseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_list_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "bogus = 1\nalso_bogus = 2\n").unwrap();
    let o = tipseg(&["train", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("also_bogus"), "{err}");

    let o = tipseg(&[
        "crossval",
        "--set",
        "lr=fast",
        "--set",
        "tau=-1",
        "--families",
        "A,Q",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["lr", "tau", "Q"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn render_requires_all_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = tipseg(&["render", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["mesh", "kinematics", "intrinsics"] {
        assert!(err.contains(key), "{err}");
    }
}

fn crossval(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "-q",
        "crossval",
        "--families",
        "2",
        "--per-family",
        "8",
        "--epochs",
        "2",
        "--out",
        path(out),
    ];
    args.extend_from_slice(extra);
    tipseg(&args)
}

#[test]
fn crossval_smoke_writes_a_report_per_fold_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let t0 = Instant::now();
    let o = crossval(&first, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t0.elapsed() < Duration::from_secs(300));

    let csv = std::fs::read_to_string(first.join("metrics.csv")).unwrap();
    let folds: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter(|f| f.len() == 1)
        .collect();
    assert_eq!(folds, ["A", "B"]);
    for f in ["A", "B"] {
        assert!(first.join(format!("epochs_{f}.csv")).exists());
    }

    // the recorded run alone reproduces the metrics
    let second = dir.path().join("second");
    let run = first.join("run.txt");
    let o = tipseg(&[
        "-q",
        "crossval",
        "--config",
        path(&run),
        "--out",
        path(&second),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(first.join("metrics.csv")).unwrap(),
        std::fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn ablate_gives_one_row_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    let o = tipseg(&[
        "-q",
        "ablate",
        "--arms",
        "VIS,FULL",
        "--families",
        "2",
        "--per-family",
        "4",
        "--epochs",
        "1",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let arms: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(arms, ["VIS", "FULL"]);
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = tipseg(&[
        "-q",
        "gen-data",
        "--families",
        "A,B",
        "--per-family",
        "3",
        "--image-size",
        "32",
        "--out",
        path(&data),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train_out = dir.path().join("train");
    let o = tipseg(&[
        "-q",
        "train",
        "--data",
        path(&data),
        "--holdout",
        "B",
        "--epochs",
        "1",
        "--image-size",
        "32",
        "--feature-channels",
        "12",
        "--out",
        path(&train_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt: PathBuf = train_out.join("model.ckpt");
    assert!(ckpt.exists());
    let eval_out = dir.path().join("eval");
    let o = tipseg(&[
        "-q",
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data),
        "--families",
        "B",
        "--out",
        path(&eval_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(eval_out.join("metrics.csv").exists());
    assert!(eval_out.join("run.txt").exists());

    // a checkpoint that is not one is a data error
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = tipseg(&[
        "eval",
        "--checkpoint",
        path(&dir.path().join("junk.ckpt")),
        "--data",
        path(&data),
        "--out",
        path(&eval_out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
