mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn geoprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoprobe"))
        .args(args)
        .env_remove("GEOPROBE_API_TOKEN")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geoprobe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_manifest(dir: &Path) -> String {
    let m = json!({
        "bank": common::data("sample_bank.json"),
        "models": [
            common::synthetic("qwen2.5-7b-base", json!({"country_bias": {"CN": -0.15}})),
            common::synthetic("qwen2.5-7b-inst", json!({"country_bias": {"CN": 2.91}})),
        ],
        "scenarios": ["airspace_01", "maritime_01"],
        "languages": ["en"],
        "freegen": {"generations": 2},
        "output_dir": "out",
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, m.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verbs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());

    let out = ok(&["run", "--manifest", &m, "--limit", "100"]);
    assert!(out.contains("main: 448 planned, 0 present, 100 written, 0 gaps, 348 deferred"), "{out}");
    let out = ok(&["run", "--manifest", &m]);
    assert!(out.contains("348 written"), "{out}");
    let run_dir = out
        .lines()
        .find_map(|l| l.split(" -> ").nth(1))
        .unwrap()
        .to_string();
    assert!(Path::new(&run_dir).starts_with(dir.path().join("out")));

    let json_report: Value = serde_json::from_str(&ok(&["report", "--manifest", &m, "--format", "json"])).unwrap();
    assert_eq!(json_report["counts"]["main_records"], 448);
    let text = ok(&["report", "--run-dir", &run_dir]);
    assert!(text.contains("Family") && text.contains("ΔEN") && text.contains("+3.06"), "{text}");

    let strict: Value =
        serde_json::from_str(&ok(&["coherence", "--run-dir", &run_dir, "--threshold", "0.9", "--format", "json"])).unwrap();
    assert_eq!(strict["threshold"], 0.9);
    assert!(ok(&["coherence", "--manifest", &m]).contains("airspace_01"));

    let out = ok(&["freegen", "--manifest", &m]);
    assert!(out.contains("freegen: 4 planned"), "{out}");
    let out = ok(&["ablate", "--manifest", &m, "--all"]);
    assert!(out.contains("ablations:"), "{out}");

    let diag = ok(&["diag-firsttoken", "--manifest", &m, "--model", "qwen2.5-7b-inst", "--pair", "US,CN", "-k", "3"]);
    assert!(diag.contains("compliance=1.0000"), "{diag}");
    let rows: Value = serde_json::from_str(&ok(&["diag-firsttoken", "--manifest", &m, "--format", "json"])).unwrap();
    assert_eq!(rows[0]["model_id"], "qwen2.5-7b-base");
}

#[test]
fn seed_override_changes_the_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let a = ok(&["run", "--manifest", &m, "--limit", "1"]);
    let b = ok(&["run", "--manifest", &m, "--limit", "1", "--seed", "9"]);
    let id = |s: &str| s.split_whitespace().nth(1).unwrap().to_string();
    assert_ne!(id(&a), id(&b));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"bank\": 1").unwrap();
    let out = geoprobe(&["run", "--manifest", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = geoprobe(&["report", "--run-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run"));

    let m = write_manifest(dir.path());
    let out = geoprobe(&["ablate", "--manifest", &m]);
    assert!(!out.status.success());
}

#[test]
fn provider_url_override_reaches_the_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path());
    let out = geoprobe(&["run", "--manifest", &m, "--limit", "2", "--provider-url", "http://127.0.0.1:9"]);
    // retries exhaust against a closed port: queries become gaps rather than aborting the run
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 gaps"));
}
