mod common;

use std::path::Path;
use std::process::{Command, Output};

fn cfsd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfsd"))
        .args(args)
        .env("CFSD_OUT", out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, common::tiny_config().to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_fails_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfsd(&["frobnicate"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn bad_config_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[loss]\nlambda = -1.0\n").unwrap();
    let out = cfsd(&["--config", path.to_str().unwrap(), "gen-data"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("cfsd: error:"));

    std::fs::write(&path, "[loss]\nlamda = 0.1\n").unwrap();
    let out = cfsd(&["--config", path.to_str().unwrap(), "gen-data"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn gen_data_then_protocol_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let data_dir = dir.path().join("data");
    let out = cfsd(&["--config", &config, "--out", data_dir.to_str().unwrap(), "gen-data"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["initial_train.cfsdat", "real_test.cfsdat", "syn-genprint_test.cfsdat", "styles.toml"] {
        assert!(data_dir.join(name).exists(), "{name}");
    }

    let run_dir = dir.path().join("run");
    let run = run_dir.to_str().unwrap();
    let out = cfsd(&["--config", &config, "--out", run, "train-base"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("base.ckpt").exists());
    let out = cfsd(&["--config", &config, "--out", run, "report"], dir.path());
    assert!(out.status.success());

    let out = cfsd(&["--config", &config, "--out", run, "run-protocol"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("matrix.csv").exists());
    assert!(run_dir.join("step2.ckpt").exists());
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("step2"), "{table}");

    let out = cfsd(
        &[
            "--config",
            &config,
            "eval",
            "--checkpoint",
            run_dir.join("step2.ckpt").to_str().unwrap(),
            "--dataset",
            data_dir.join("syn-genprint_test.cfsdat").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("style,n,tdr_at_tau,fdr_at_tau,tdr_at_fdr"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "syn-genprint");
    assert!(row[2..].iter().all(|v| v.parse::<f64>().is_ok()));

    let out = cfsd(&["--config", &config, "--out", run, "report"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("base"));
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("x.ckpt");
    std::fs::write(&ckpt, b"CFSD1garbage").unwrap();
    let data = dir.path().join("d.cfsdat");
    std::fs::write(&data, b"nope").unwrap();
    let out = cfsd(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", data.to_str().unwrap()],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
