use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use condenser::report::{read_csv, read_log, ReportRow};

fn condenser(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condenser"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn golden(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("golden")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout_json(o: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

/// The single machine-readable error line.
fn error_code(o: &Output) -> String {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    v["error"]["code"].as_str().unwrap().to_string()
}

#[test]
fn validate_golden_documents() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["reference.json", "micro.json"] {
        let o = condenser(&["validate", &golden(f)], dir.path());
        assert!(o.status.success(), "{f}: {}", String::from_utf8_lossy(&o.stderr));
        let v = &stdout_json(&o)[0];
        assert_eq!(v["valid"], true);
    }
}

#[test]
fn init_spec_reproduces_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = condenser(&["init-spec", "--preset", "micro"], dir.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout), std::fs::read_to_string(golden("micro.json")).unwrap());
    let o = condenser(&["init-spec", "--out", "ref.json"], dir.path());
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("ref.json")).unwrap(),
        std::fs::read_to_string(golden("reference.json")).unwrap()
    );
}

#[test]
fn invalid_spec_fails_with_locations() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden("micro.json")).unwrap()).unwrap();
    v["stages"][0]["columns"][1][0]["c_in"] = 5.into();
    std::fs::write(dir.path().join("bad.json"), v.to_string()).unwrap();
    let o = condenser(&["validate", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "spec.invalid");
    let out = &stdout_json(&o)[0];
    assert_eq!(out["valid"], false);
    assert!(out["violations"][0]["location"].as_str().unwrap().starts_with("stages[0].columns[1][0]"));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = condenser(&["bench", "--spec", &golden("micro.json"), "--iters", "5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "usage");
    let o = condenser(&["validate", "--frobnicate", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "usage");
    let o = condenser(&["gradcheck", "--module", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = condenser(&["validate", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "io");
    let o = condenser(&["--help"], dir.path());
    assert!(o.status.success());
}

#[test]
fn gradcheck_dcac() {
    let dir = tempfile::tempdir().unwrap();
    let o = condenser(&["gradcheck", "--module", "dcac"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = &stdout_json(&o)[0];
    assert_eq!(v["module"], "dcac");
    assert!(v["max_rel_err"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["pass"], true);
}

#[test]
fn train_eval_bench_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = golden("reference.json");
    let o = condenser(
        &["train", "--spec", &spec, "--out", "m.acnx", "--per-class", "5", "--epochs", "1", "--batch", "10"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_json(&o);
    assert_eq!(lines[0]["epoch"], 1);
    assert!(dir.path().join("m.acnx").exists());

    let o = condenser(&["eval", "--checkpoint", "m.acnx", "--per-class", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = &stdout_json(&o)[0];
    assert_eq!(v["samples"], 30);
    let top1 = v["top1"].as_f64().unwrap();

    let o = condenser(
        &["report", "--checkpoint", "m.acnx", "--out", "r.csv", "--per-class", "3", "--iters", "10"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = condenser(&["bench", "--checkpoint", "m.acnx", "--iters", "10", "--out", "r.csv"], dir.path());
    assert!(o.status.success());
    let rows: Vec<ReportRow> = read_csv(&dir.path().join("r.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].top1, Some(top1));
    assert_eq!(rows[1].top1, None);
    assert_eq!(rows[0].params, 114_426);
    assert!(dir.path().join("r.timings.csv").exists());

    // a corrupted checkpoint is refused with its error class
    let mut bytes = std::fs::read(dir.path().join("m.acnx")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(dir.path().join("bad.acnx"), bytes).unwrap();
    let o = condenser(&["eval", "--checkpoint", "bad.acnx"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "checkpoint.digest");
}

#[test]
fn explore_writes_log_and_best() {
    let dir = tempfile::tempdir().unwrap();
    let cs = r#"{"require_columnar":true,"forbid_pointwise_strided":true,"require_aads":true}"#;
    std::fs::write(dir.path().join("cs.json"), cs).unwrap();
    let o = condenser(
        &[
            "explore", "--population", "2", "--generations", "2", "--seed", "3", "--constraints", "cs.json", "--out",
            "run", "--epochs", "0", "--per-class", "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_log(&dir.path().join("run/log.jsonl")).unwrap();
    assert_eq!(log.len(), 4);
    let o2 = condenser(&["validate", "run/best.json"], dir.path());
    assert!(o2.status.success());
    let best = &stdout_json(&o)[0]["best"];
    let digest = best["spec_digest"].as_str().unwrap();
    assert!(log.iter().any(|l| l.spec_digest == digest && l.feasible));
}
