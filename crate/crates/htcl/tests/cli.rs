use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn htcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htcl")).args(args).env_remove("HTCL_SEED").output().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert!(htcl(&["--help"]).status.success());
    assert!(htcl(&["--version"]).status.success());
}

#[test]
fn usage_errors_exit_two_with_json() {
    for args in [&["bogus"][..], &["train"], &["gradcheck", "--case", "nope"], &["generate"]] {
        let o = htcl(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&o)["error"]["kind"], "usage");
    }
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.json");
    write(&cfg, r#"{"C": 1}"#);
    let out = dir.path().join("out");
    let o = htcl(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "invalid_config");
    assert_eq!(e["error"]["field"], "C");
    assert!(!out.exists());

    write(&cfg, r#"{"epochz": 3}"#);
    let o = htcl(&["train", "--config", cfg.to_str().unwrap(), "--data", ".", "--out", out.to_str().unwrap()]);
    assert_eq!(stderr_json(&o)["error"]["kind"], "json");
    assert!(!out.exists());
}

#[test]
fn generate_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (gen, train) = (d.join("g.json"), d.join("t.json"));
    write(&gen, r#"{"num_images": 60, "C": 6, "N_obj": 5, "d_v": 8, "seed": 2}"#);
    write(&train, r#"{"epochs": 1, "batch_size": 8}"#);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = d.join("data");
    assert!(htcl(&["generate", "--config", &s(&gen), "--out", &s(&data)]).status.success());
    let run = d.join("run");
    let o = htcl(&["train", "--config", &s(&train), "--data", &s(&data), "--out", &s(&run), "--k", "5,20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "loss_curve.csv", "epochs.csv", "report.csv", "metrics.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let ev = d.join("eval");
    let o = htcl(&["evaluate", "--data", &s(&data), "--checkpoint", &s(&run.join("checkpoint.json")), "--out", &s(&ev), "--k", "5,20"]);
    assert!(o.status.success());
    let a: Value = serde_json::from_slice(&o.stdout).unwrap();
    let o = htcl(&["evaluate", "--data", &s(&data), "--predictions", &s(&ev.join("predictions.json")), "--k", "5,20"]);
    let b: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(a["metrics"], b["metrics"]);
    let trained: Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(trained, serde_json::from_str::<Value>(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap());
}
