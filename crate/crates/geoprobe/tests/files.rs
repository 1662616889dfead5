mod common;

use std::io::Write;

use geoprobe::bank_io::{load_bank, load_bank_file, sample_bank, save_bank, BankLoadError};
use geoprobe::manifest::{ManifestError, RunManifest};
use geoprobe::profiles::{ProfileError, ProfileRegistry};
use geoprobe::store::{read_jsonl, JsonlWriter};
use geoprobe_core::bank::{Language, PhrasingId};
use geoprobe_core::prompt::{ChatTemplate, TokenizerMode};
use serde_json::{json, Value};

#[test]
fn sample_bank_shape() {
    let bank = sample_bank();
    assert_eq!(bank.real_countries().count(), 8);
    assert_eq!(bank.fictional_countries().count(), 8);
    assert_eq!(bank.real_pairs().len(), 28);
    assert_eq!(bank.fictional_pairs().len(), 28);
    assert!(bank.languages.contains(&Language::En) && bank.languages.contains(&Language::Zh));
    assert!(bank.languages.contains(&Language::Fr));
    assert!(bank.scenario("airspace_01").is_ok());
    assert_eq!(bank.paired_phrasings()[0], PhrasingId::Default);
    assert!(bank.paired_phrasings().len() >= 2);
}

#[test]
fn bank_round_trips() {
    let bank = sample_bank();
    let mut buf = Vec::new();
    save_bank(&bank, &mut buf).unwrap();
    assert_eq!(load_bank(buf.as_slice()).unwrap(), bank);
}

#[test]
fn bank_parse_error_has_position() {
    let err = load_bank("{\n  \"bank_version\": 1,\n  oops\n}".as_bytes()).unwrap_err();
    match err {
        BankLoadError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
}

fn mutated(f: impl FnOnce(&mut Value)) -> Result<geoprobe_core::bank::Bank, BankLoadError> {
    let mut v: Value = serde_json::from_str(geoprobe::bank_io::SAMPLE_BANK).unwrap();
    f(&mut v);
    load_bank(v.to_string().as_bytes())
}

#[test]
fn bank_invariants_are_enforced() {
    // duplicate scenario id
    let err = mutated(|v| {
        let s = v["scenarios"][0].clone();
        v["scenarios"].as_array_mut().unwrap().push(s);
    })
    .unwrap_err();
    assert!(matches!(err, BankLoadError::Invariant(_)), "{err}");

    // narrative without a slot placeholder
    let err = mutated(|v| v["scenarios"][0]["narrative"]["en"] = json!("Nothing happened.")).unwrap_err();
    assert!(matches!(err, BankLoadError::Invariant(_)), "{err}");

    // display name missing for a bank language
    let err = mutated(|v| {
        v["countries"][0]["display_name"].as_object_mut().unwrap().remove("zh");
    })
    .unwrap_err();
    assert!(matches!(err, BankLoadError::Invariant(_)), "{err}");
}

#[test]
fn missing_bank_file() {
    let err = load_bank_file(std::path::Path::new("/nonexistent/bank.json")).unwrap_err();
    assert!(matches!(err, BankLoadError::Io(_)));
}

#[test]
fn builtin_profiles() {
    let reg = ProfileRegistry::builtin();
    assert_eq!(reg.profiles.len(), 14);
    let families: std::collections::BTreeSet<_> = reg.profiles.iter().map(|p| p.family.as_str()).collect();
    assert_eq!(families.len(), 7);
    for f in &families {
        let members: Vec<_> = reg.profiles.iter().filter(|p| &p.family == f).collect();
        assert_eq!(members.iter().filter(|p| p.is_post_trained).count(), 1, "{f}");
    }
    let qwen = reg.get("qwen2.5-7b-inst").unwrap();
    assert_eq!(qwen.tokenizer_mode, TokenizerMode::SingleToken);
    let yi = reg.get("yi1.5-9b-chat").unwrap();
    assert_eq!(yi.prefill_token.as_deref(), Some("("));
    assert_eq!(reg.get("glm4-9b-chat").unwrap().prefill_token.as_deref(), Some("\n"));
    assert!(reg.get("gemma4-8b-it").unwrap().answer_variants_a.len() >= 2);
    assert!(reg.profiles.iter().filter(|p| !p.is_post_trained).all(|p| p.chat_template == ChatTemplate::Raw));
    assert!(matches!(reg.get("nope"), Err(ProfileError::Unknown(_))));
}

#[test]
fn duplicate_profiles_rejected() {
    let mut v: Value = serde_json::from_str(geoprobe::profiles::BUILTIN_PROFILES).unwrap();
    let p = v["profiles"][0].clone();
    v["profiles"].as_array_mut().unwrap().push(p);
    let err = ProfileRegistry::load(v.to_string().as_bytes()).unwrap_err();
    assert!(matches!(err, ProfileError::Duplicate(_)));
}

#[test]
fn manifest_file_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"bank": "bank.json", "models": [{"profile": "qwen2.5-7b-inst", "provider": {"kind": "synthetic"}}]}"#,
    )
    .unwrap();
    let m = RunManifest::load(&path).unwrap();
    assert_eq!(m.bank, dir.path().join("bank.json"));
    assert_eq!(m.output_dir, dir.path().join("runs"));
}

#[test]
fn manifest_rejects_unknown_shapes() {
    let err = RunManifest::from_json(r#"{"bank": "b", "models": []}"#).unwrap_err();
    assert!(matches!(err, ManifestError::Invalid(_)));
    let err = RunManifest::from_json(r#"{"bank": "b", "models": [{"profile": "p", "provider": {"kind": "grpc"}}]}"#)
        .unwrap_err();
    assert!(matches!(err, ManifestError::Parse { .. }));
}

#[test]
fn example_manifest_loads() {
    let m = RunManifest::load(&common::data("example_manifest.json")).unwrap();
    let exp = geoprobe::runner::Experiment::load(m).unwrap();
    assert_eq!(exp.profiles.len(), 2);
    assert_eq!(exp.run_id.len(), 16);
}

#[test]
fn jsonl_writer_repairs_a_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    {
        let mut w = JsonlWriter::append(&path).unwrap();
        w.write(&json!({"a": 1})).unwrap();
    }
    // simulate a crash mid-line
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"a\": 2, \"b")
        .unwrap();
    let rows: Vec<Value> = read_jsonl(&path).unwrap();
    assert_eq!(rows, vec![json!({"a": 1})]);
    {
        let mut w = JsonlWriter::append(&path).unwrap();
        w.write(&json!({"a": 3})).unwrap();
    }
    let rows: Vec<Value> = read_jsonl(&path).unwrap();
    assert_eq!(rows, vec![json!({"a": 1}), json!({"a": 3})]);
}
