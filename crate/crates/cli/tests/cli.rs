use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

fn cmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmc"))
        .args(args)
        .env_remove("CMC_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cmc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Failing invocation; returns its single-line diagnosis.
fn fails(args: &[&str]) -> String {
    let out = cmc(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "diagnosis should be one line: {err}");
    lines[0].to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn help_lists_every_override_key() {
    for sub in ["synth-data", "train", "eval", "predict", "cam", "ensemble-eval"] {
        let help = ok(&[sub, "--help"]);
        for (key, _) in cmc_core::config::override_keys() {
            assert!(help.contains(&key), "`{sub} --help` misses {key}");
        }
        assert!(help.contains("CMC_DATA_ROOT"));
    }
}

#[test]
fn unknown_override_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let line = fails(&["synth-data", "--out", p(dir.path()), "--set", "training.epoch=3"]);
    assert!(line.contains("training.epoch"), "{line}");
}

#[test]
fn missing_checkpoint_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let line = fails(&["eval", "--config", SMOKE, "--checkpoint", "/nonexistent.ckpt", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert!(line.contains("nonexistent.ckpt"), "{line}");
}

#[test]
fn missing_data_root_names_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let line = fails(&["train", "--config", SMOKE, "--out", p(dir.path())]);
    assert!(line.contains("CMC_DATA_ROOT"), "{line}");
}

#[test]
fn synth_data_layout_balance_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = ["synth-data", "--config", SMOKE, "--set", "phantom.scans=20", "--seed", "1", "--out", p(&out)];
    ok(&args);
    let scans = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(scans, 20);
    let labels = std::fs::read(out.join("labels.csv")).unwrap();
    let rows = csv_rows(&out.join("labels.csv"));
    assert_eq!(rows.len(), 20);
    assert_eq!(rows.iter().filter(|r| &r[1] == "1").count(), 10);

    let line = fails(&args);
    assert!(line.contains("--force"), "{line}");
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
    assert_eq!(std::fs::read(out.join("labels.csv")).unwrap(), labels);
}

#[test]
fn smoke_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let cfg = ["--config", SMOKE];
    ok(&[&cfg[..], &["synth-data", "--out", p(&data)]].concat());
    ok(&[&cfg[..], &["train", "--data", p(&data), "--out", p(&run)]].concat());
    assert_eq!(csv_rows(&run.join("metrics.csv")).len(), 2);
    let best = run.join("best.ckpt");
    assert!(best.is_file() && run.join("last.ckpt").is_file());

    let (eval_dir, ens_dir) = (dir.path().join("eval"), dir.path().join("ens"));
    ok(&[&cfg[..], &["eval", "--checkpoint", p(&best), "--data", p(&data), "--out", p(&eval_dir)]].concat());
    ok(&[&cfg[..], &["ensemble-eval", "--checkpoint", p(&best), "--data", p(&data), "--out", p(&ens_dir)]].concat());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval_dir.join("eval_report.json")).unwrap()).unwrap();
    assert!(report["report"]["macro_f1"].is_number());
    assert!(report["config_hash"].is_string());
    let ens: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ens_dir.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"], ens["report"]);
    assert_eq!(
        std::fs::read(eval_dir.join("roc.csv")).unwrap(),
        std::fs::read(ens_dir.join("roc.csv")).unwrap()
    );

    let input = dir.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    let mut scans: Vec<PathBuf> = std::fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    scans.sort();
    for s in scans.iter().take(5) {
        let target = input.join(s.file_name().unwrap());
        std::fs::create_dir_all(&target).unwrap();
        for f in std::fs::read_dir(s).unwrap() {
            let f = f.unwrap().path();
            std::fs::copy(&f, target.join(f.file_name().unwrap())).unwrap();
        }
    }
    let preds = dir.path().join("preds.csv");
    ok(&[&cfg[..], &["predict", "--checkpoint", p(&best), "--input", p(&input), "--out", p(&preds), "--tta", "2"]].concat());
    let rows = csv_rows(&preds);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let sum: f64 = r[1].parse::<f64>().unwrap() + r[2].parse::<f64>().unwrap();
        assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
    }

    let cam_dir = dir.path().join("cam");
    ok(&[&cfg[..], &["cam", "--checkpoint", p(&best), "--data", p(&data), "--out", p(&cam_dir), "--limit", "2"]].concat());
    let pngs = walk(&cam_dir).into_iter().filter(|f| f.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 2 * 8, "one overlay per slice of two scans");
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}
