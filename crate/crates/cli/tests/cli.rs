use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmlab")).args(args).output().expect("spawn cmlab")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stamp_free(path: &Path) -> String {
    cmlab_core::lab::report::without_timestamp(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eps_sweep_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eps");
    let o = cmlab(&["rates", "--sweep", "eps", "--out", out.to_str().unwrap(), "--threads", "2"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().next().unwrap().starts_with("PASS slope"));
    for f in ["report.json", "cells.csv", "plot.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cells = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert!(cells.starts_with("cell,trial,w1,stderr\n"));
}

#[test]
fn rerun_is_byte_identical_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{ "trials": 3, "sweep": { "variable": "M", "grid": [8, 16, 32, 64] } }"#);
    let runs: Vec<_> = ["1", "3"]
        .iter()
        .map(|threads| {
            let out = dir.path().join(format!("run{threads}"));
            let o = cmlab(&[
                "rates",
                "--sweep",
                "M",
                "--config",
                &cfg,
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ]);
            assert!(o.status.code().is_some());
            out
        })
        .collect();
    assert_eq!(stamp_free(&runs[0].join("report.json")), stamp_free(&runs[1].join("report.json")));
    for f in ["cells.csv", "plot.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn injected_fault_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{ "fault": 0.1, "probes": 500 }"#);
    let out = dir.path().join("id");
    let o = cmlab(&["check", "identities", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL score.tweedie_identity"), "{stdout}");
}

#[test]
fn malformed_config_is_a_usage_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{\n  \"trials\": 3,\n  \"n\": ,\n}");
    let o = cmlab(&["check", "tails", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unknown_key_and_bad_invariant_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for text in [r#"{ "trails": 3 }"#, r#"{ "trials": 2 }"#] {
        let cfg = write(dir.path(), "c.json", text);
        let o = cmlab(&["check", "tails", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn direct_only_with_n_sweep() {
    let o = cmlab(&["rates", "--sweep", "T", "--direct"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_prints_parseable_defaults() {
    let o = cmlab(&["config", "train-ct"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n"], 64);
    assert_eq!(cmlab(&["config", "nope"]).status.code(), Some(2));
}

#[test]
fn train_then_sample_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{ "n": 8, "M": 8, "m_eval": 200, "loss_m_batch": 128, "train": { "steps": 30, "pool": 256 } }"#,
    );
    let out = dir.path().join("train");
    let o = cmlab(&["train", "ct", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("checkpoint.json");
    assert!(ckpt.exists() && out.join("loss.csv").exists());
    let sout = dir.path().join("sample");
    let o =
        cmlab(&["sample", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg, "--out", sout.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let samples = fs::read_to_string(sout.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 201);
}
