use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use meltpool::eval::{build_report, parse_report};

fn meltpool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meltpool"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    text.lines().last().unwrap_or_default().to_string()
}

fn assert_fails(out: &Output, code: i32, kind: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let line = stderr_line(out);
    assert!(line.starts_with(&format!("error: kind={kind} msg=\"")), "{line}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails(&meltpool(dir.path(), &["train", "--role", "t"]), 2, "usage");
    assert_fails(&meltpool(dir.path(), &["frobnicate"]), 2, "usage");
    let out = meltpool(dir.path(), &["preprocess", "--in", "a", "--out", "b", "--crop", "64,32"]);
    assert_fails(&out, 2, "usage");
    let out = meltpool(dir.path(), &["preprocess", "--in", "a", "--out", "b", "--tmax", "hot"]);
    assert_fails(&out, 2, "usage");
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = meltpool(dir.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("preprocess"));
}

#[test]
fn missing_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = meltpool(dir.path(), &["train", "--dataset", "nowhere", "--role", "t", "--out", "t.ckpt"]);
    assert_fails(&out, 3, "io");
    let out = meltpool(dir.path(), &["infer", "--p", "100", "--v", "800", "--t", "20", "--checkpoints", "none", "--out", "f.bin"]);
    assert_fails(&out, 3, "io");
}

#[test]
fn config_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = meltpool(dir.path(), &["train", "--dataset", "ds", "--role", "mt", "--out", "mt.ckpt"]);
    assert_fails(&out, 4, "config");
    let out = meltpool(dir.path(), &["generate", "--material", "unobtainium", "--powers", "100", "--velocities", "800", "--out", "c"]);
    assert_fails(&out, 4, "config");

    let out = Command::new(env!("CARGO_BIN_EXE_meltpool"))
        .current_dir(dir.path())
        .args(["generate", "--powers", "100", "--velocities", "800", "--out", "c"])
        .env("MELTPOOL_WORKERS", "zero")
        .output()
        .unwrap();
    assert_fails(&out, 4, "config");
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("ck")).unwrap();
    fs::write(dir.path().join("ck/m.ckpt"), b"not a checkpoint at all").unwrap();
    fs::write(dir.path().join("ck/mt.ckpt"), b"not a checkpoint at all").unwrap();
    let out = meltpool(dir.path(), &["infer", "--p", "100", "--v", "800", "--t", "20", "--checkpoints", "ck", "--out", "f.bin"]);
    assert_fails(&out, 6, "format");
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = meltpool(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run_ok(
        dir,
        &[
            "generate", "--powers", "150,250", "--velocities", "600", "--grid", "48,24,20", "--frames", "3",
            "--interval", "5e-6", "--beam-start", "12,12", "--out", "cases",
        ],
    );
    assert!(dir.join("cases/P150_V600/meta.json").is_file());
    assert!(dir.join("cases/P250_V600/meta.json").is_file());

    run_ok(dir, &["preprocess", "--in", "cases", "--out", "ds", "--crop", "16,8,8", "--tmax", "auto", "--train-fraction", "1"]);

    let cfg = r#"{"channels": 4, "stages": 2, "coarse": [4, 2, 2], "batch_size": 2, "max_epochs": 2, "leaky_slope": 0.1}"#;
    fs::write(dir.join("cfg.json"), cfg).unwrap();
    run_ok(dir, &["train", "--dataset", "ds", "--role", "t", "--config", "cfg.json", "--seed", "3", "--out", "ck/t.ckpt"]);
    let common = ["--dataset", "ds", "--config", "cfg.json", "--seed", "3", "--t-checkpoint", "ck/t.ckpt"];
    let mut m_args = vec!["train", "--role", "m", "--out", "ck/m.ckpt"];
    m_args.extend(common);
    run_ok(dir, &m_args);
    let mut mt_args = vec!["train", "--role", "mt", "--out", "ck/mt.ckpt", "--m-checkpoint", "ck/m.ckpt"];
    mt_args.extend(common);
    run_ok(dir, &mt_args);

    let log = fs::read_to_string(dir.join("ck/mt.metrics.jsonl")).unwrap();
    let epochs: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 2);
    assert_eq!(epochs[1]["epoch"], 2);
    assert!(epochs[0]["mean_loss"].as_f64().unwrap().is_finite());
    assert!(epochs[0]["learning_rate"].as_f64().unwrap() > 0.0);

    let summary = run_ok(
        dir,
        &["eval", "--dataset", "ds", "--checkpoints", "ck", "--report", "report.csv", "--summary", "sum.json", "--slices", "slices"],
    );
    assert!(summary.contains("records=6"), "{summary}");
    let rows = parse_report(Path::new("report.csv"), &fs::read_to_string(dir.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    let keys: Vec<_> = rows.iter().map(|r| (r.case_id.clone(), r.frame)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("sum.json")).unwrap()).unwrap();
    let expect = build_report(&rows);
    assert_eq!(table["rmse"]["mean"].as_f64().unwrap(), expect.rmse.mean);
    assert!(fs::read(dir.join("slices/P150_V600_f000_pred_xy.pgm")).unwrap().starts_with(b"P5\n16 8\n255\n"));

    let out = run_ok(dir, &["infer", "--p", "200", "--v", "600", "--t", "10", "--checkpoints", "ck", "--out", "field.bin"]);
    let line = out.lines().last().unwrap();
    let min: f64 = line.split_whitespace().next().unwrap().trim_start_matches("min_temperature=").parse().unwrap();
    assert!(min >= 293.0, "{line}");
    assert!(dir.join("field.bin").is_file());
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("field.json")).unwrap()).unwrap();
    assert!((side["min_temperature"].as_f64().unwrap() - min).abs() < 1e-3);
}
