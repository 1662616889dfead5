#![allow(dead_code)]

use std::path::{Path, PathBuf};

use geoprobe::manifest::RunManifest;
use geoprobe::runner::Experiment;
use serde_json::{json, Value};

pub fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(file)
}

pub fn fixture(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(file)
}

pub const SIX: [&str; 6] = ["airspace_01", "maritime_01", "cyber_01", "trade_01", "humanitarian_01", "sovereignty_01"];

/// Manifest over the sample bank; `extra` is merged over the defaults.
pub fn manifest(models: Value, out: &Path, extra: Value) -> RunManifest {
    let mut m = json!({
        "bank": data("sample_bank.json"),
        "models": models,
        "output_dir": out,
        "concurrency": 4,
    });
    if let (Some(m), Some(e)) = (m.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            m.insert(k.clone(), v.clone());
        }
    }
    RunManifest::from_json(&m.to_string()).expect("test manifest")
}

pub fn synthetic(profile: &str, spec: Value) -> Value {
    json!({"profile": profile, "provider": {"kind": "synthetic", "spec": spec}})
}

pub fn experiment(models: Value, out: &Path, extra: Value) -> Experiment {
    Experiment::load(manifest(models, out, extra)).expect("experiment loads")
}
