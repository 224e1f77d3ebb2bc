use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_cfcp");

#[test]
fn gen_then_run_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reg.csv");
    let status = Command::new(BIN)
        .args(["gen", "--scm", "reg", "--n", "600", "--seed", "4", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let config = dir.path().join("cfg.json");
    let cfg = serde_json::json!({
        "source": {"kind": "csv", "path": data, "schema": {"classification": false}},
        "methods": ["split_cp"],
        "n_train": 200, "n_cal": 150, "n_test": 200, "runs": 2
    });
    fs::write(&config, cfg.to_string()).unwrap();
    let out = Command::new(BIN).args(["run", "--jobs", "1", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,metric,mean,std,runs,config_hash"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn failures_print_a_json_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"source": {"kind": "synth_regression"}, "methods": []}"#).unwrap();
    let out = Command::new(BIN).args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(record["error"], "config");
    assert!(record["message"].as_str().unwrap().contains("methods"));
}
