use std::fs;
use std::path::Path;
use std::process::Command;

const ROSENTHAL: &str = r#"{
  "experiment": "rosenthal-check",
  "depths": [4],
  "paths": 100,
  "p_values": [3.0],
  "process": {
    "family": {"kind": "torus", "matrix": [[2]], "gamma": [[0], [1]]},
    "observable": {"kind": "trig", "terms": [{"freq": [1], "cos": 1.0}]}
  },
  "seed": 42
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strongapprox"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_in(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> std::process::Output {
    bin()
        .arg(sub)
        .args(["--config", config, "--out"])
        .arg(dir)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn rates_writes_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "rates.json",
        r#"{"experiment": "rates", "p": 4.0, "gamma": 1.5}"#,
    );
    let out = tmp.path().join("out");
    let o = run_in(&out, "rates", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["feasible"], serde_json::Value::Bool(true));
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("config_hash") && summary.contains("ChaCha8"));
}

#[test]
fn rosenthal_run_passes_on_every_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "r.json", ROSENTHAL);
    let out = tmp.path().join("out");
    let o = run_in(&out, "rosenthal", &cfg, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(out.join("pointwise.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    let report = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert_eq!(report.status.code(), Some(0));
}

#[test]
fn malformed_family_exits_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = ROSENTHAL.replace(
        r#"{"kind": "torus", "matrix": [[2]], "gamma": [[0], [1]]}"#,
        r#"{"kind": "piecewise_affine", "slopes": [0.5, 0.4], "intercepts": [0.0, 0.5]}"#,
    );
    let cfg = write(tmp.path(), "bad.json", &bad);
    let out = tmp.path().join("out");
    let o = run_in(&out, "rosenthal", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    assert!(!out.exists());
}

#[test]
fn wrong_subcommand_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "rates.json",
        r#"{"experiment": "rates", "p": 4.0, "gamma": 1.5}"#,
    );
    assert_eq!(
        run_in(&tmp.path().join("o"), "kmt", &cfg, &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn failing_verdict_exits_one_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{
          "experiment": "sigma2", "lag": 8, "batch_len": 64, "ensemble": 4000, "expected": [7.0, 3.0],
          "process": {
            "family": {"kind": "torus", "matrix": [[2]], "gamma": [[0], [1]]},
            "observable": {"kind": "trig", "terms": [{"freq": [1], "cos": 1.0}]}
          }
        }"#,
    );
    let o = run_in(&tmp.path().join("o"), "sigma2", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma2.json"));
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "r.json", ROSENTHAL);
    let a = tmp.path().join("w1");
    let b = tmp.path().join("w8");
    assert_eq!(
        run_in(&a, "rosenthal", &cfg, &["--workers", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run_in(&b, "rosenthal", &cfg, &["--workers", "8"])
            .status
            .code(),
        Some(0)
    );
    for name in ["pointwise.csv", "moment.csv", "paths.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}
