//! On-disk layout of a run.
//!
//! ```text
//! <output_dir>/<run_id>/run.json          manifest, bank and profile snapshot
//!                       records.jsonl     MeasurementRecord per line
//!                       generations.jsonl GenerationRecord per line
//!                       gaps.jsonl        queries that failed after retries
//!                       coherence.jsonl   CoherenceReport per scenario
//!                       report.json / report.txt
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use geoprobe_core::bank::Bank;
use geoprobe_core::freegen::{ControlKind, GenerationRecord};
use geoprobe_core::prompt::ModelProfile;
use geoprobe_core::scoring::{MeasurementRecord, RecordKey};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::manifest::RunManifest;

pub const RUN_FILE: &str = "run.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const GAPS_FILE: &str = "gaps.jsonl";
pub const COHERENCE_FILE: &str = "coherence.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("no run at {0}")]
    UnknownRun(PathBuf),
    #[error("run directory {dir} belongs to run {found}, not {expected}")]
    Mismatch { dir: PathBuf, found: String, expected: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything needed to recompute a report from the run directory alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub manifest: RunManifest,
    pub bank: Bank,
    pub profiles: Vec<ModelProfile>,
}

/// Identity of a run: the bank, the profiles and provider settings of its
/// models, the language conditions, the scenario filter, the target and the
/// seed. Ablation and freegen toggles, concurrency, limits and output paths
/// do not change it, so those stages add to the same run.
pub fn run_id(manifest: &RunManifest, bank: &Bank, profiles: &[ModelProfile]) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        bank: &'a Bank,
        profiles: &'a [ModelProfile],
        models: &'a [crate::manifest::ModelEntry],
        languages: &'a [crate::manifest::LanguageCondition],
        scenarios: &'a Option<Vec<String>>,
        target_country: &'a str,
        seed: u64,
    }
    let id = Identity {
        bank,
        profiles,
        models: &manifest.models,
        languages: &manifest.languages,
        scenarios: &manifest.scenarios,
        target_country: &manifest.target_country,
        seed: manifest.seed,
    };
    let bytes = serde_json::to_vec(&id).expect("identity serializes");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "probe", rename_all = "snake_case")]
pub enum GapProbe {
    Measurement { key: RecordKey },
    Generation { key: RecordKey, control_kind: ControlKind },
}

impl GapProbe {
    pub fn model_id(&self) -> &str {
        match self {
            GapProbe::Measurement { key } | GapProbe::Generation { key, .. } => &key.model_id,
        }
    }
}

/// A query that still failed after its retries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    #[serde(flatten)]
    pub probe: GapProbe,
    pub error: String,
    pub attempts: u32,
}

/// Stable identity of a generation record.
pub fn generation_key(r: &GenerationRecord) -> (RecordKey, ControlKind) {
    (
        RecordKey {
            model_id: r.model_id.clone(),
            scenario_id: r.scenario_id.clone(),
            pair: r.pair.clone(),
            ordering: r.ordering,
            polarity: r.polarity,
            scenario_language: r.scenario_language,
            question_language: r.question_language,
            phrasing_id: r.phrasing_id,
            flags: Default::default(),
        },
        r.control_kind,
    )
}

#[derive(Clone, Debug)]
pub struct RunStore {
    dir: PathBuf,
}

/// Append-only JSONL writer; each line is flushed as it is written.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn append(path: &Path) -> Result<Self, StoreError> {
        repair_tail(path)?;
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, item: &T) -> Result<(), StoreError> {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(self.out, "{line}").map_err(io(&self.path))?;
        self.out.flush().map_err(io(&self.path))
    }
}

/// Drop a partial final line left by an interrupted writer.
fn repair_tail(path: &Path) -> Result<(), StoreError> {
    let Ok(bytes) = fs::read(path) else { return Ok(()) };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(io(path))?;
    f.set_len(keep as u64).map_err(io(path))
}

/// Read a JSONL file. A missing file is empty; an unparsable final line
/// without a trailing newline is treated as an interrupted write and skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(f).lines().collect::<Result<_, _>>().map_err(io(path))?;
    let complete_tail = fs::read(path).map_err(io(path))?.ends_with(b"\n");
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !complete_tail => {}
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StoreError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).map_err(io(&tmp))?);
        for item in items {
            let line = serde_json::to_string(item).expect("records serialize");
            writeln!(out, "{line}").map_err(io(&tmp))?;
        }
        out.flush().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

impl RunStore {
    /// Create the run directory, or reopen it if it already holds this run.
    pub fn create(root: &Path, meta: &RunMeta) -> Result<Self, StoreError> {
        let dir = root.join(&meta.run_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let store = RunStore { dir };
        let run_file = store.path(RUN_FILE);
        if run_file.exists() {
            let existing = store.meta()?;
            if existing.run_id != meta.run_id {
                return Err(StoreError::Mismatch {
                    dir: store.dir.clone(),
                    found: existing.run_id,
                    expected: meta.run_id.clone(),
                });
            }
        }
        // the snapshot always reflects the latest manifest toggles
        let text = serde_json::to_string_pretty(meta).expect("run metadata serializes");
        fs::write(&run_file, text + "\n").map_err(io(&run_file))?;
        Ok(store)
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        if !dir.join(RUN_FILE).is_file() {
            return Err(StoreError::UnknownRun(dir.to_path_buf()));
        }
        Ok(RunStore { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn meta(&self) -> Result<RunMeta, StoreError> {
        let p = self.path(RUN_FILE);
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: p,
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn records(&self) -> Result<Vec<MeasurementRecord>, StoreError> {
        read_jsonl(&self.path(RECORDS_FILE))
    }

    pub fn generations(&self) -> Result<Vec<GenerationRecord>, StoreError> {
        read_jsonl(&self.path(GENERATIONS_FILE))
    }

    pub fn gaps(&self) -> Result<Vec<GapRecord>, StoreError> {
        read_jsonl(&self.path(GAPS_FILE))
    }

    pub fn record_keys(&self) -> Result<BTreeSet<RecordKey>, StoreError> {
        Ok(self.records()?.iter().map(MeasurementRecord::key).collect())
    }

    pub fn generation_keys(&self) -> Result<BTreeSet<(RecordKey, ControlKind)>, StoreError> {
        Ok(self.generations()?.iter().map(generation_key).collect())
    }

    pub fn writer(&self, file: &str) -> Result<JsonlWriter, StoreError> {
        JsonlWriter::append(&self.path(file))
    }

    /// Sort and deduplicate records and generations by key (first write
    /// wins), and keep only gaps that are still missing.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut records: BTreeMap<RecordKey, MeasurementRecord> = BTreeMap::new();
        for r in self.records()? {
            records.entry(r.key()).or_insert(r);
        }
        let records: Vec<_> = records.into_values().collect();
        write_jsonl(&self.path(RECORDS_FILE), &records)?;

        let mut gens: BTreeMap<(RecordKey, ControlKind), GenerationRecord> = BTreeMap::new();
        for g in self.generations()? {
            gens.entry(generation_key(&g)).or_insert(g);
        }
        if !gens.is_empty() || self.path(GENERATIONS_FILE).exists() {
            write_jsonl(&self.path(GENERATIONS_FILE), &gens.values().collect::<Vec<_>>())?;
        }

        let have: BTreeSet<RecordKey> = records.iter().map(MeasurementRecord::key).collect();
        let mut gaps: BTreeMap<GapProbe, GapRecord> = BTreeMap::new();
        for g in self.gaps()? {
            let resolved = match &g.probe {
                GapProbe::Measurement { key } => have.contains(key),
                GapProbe::Generation { key, control_kind } => gens.contains_key(&(key.clone(), *control_kind)),
            };
            if !resolved {
                gaps.insert(g.probe.clone(), g);
            }
        }
        write_jsonl(&self.path(GAPS_FILE), &gaps.into_values().collect::<Vec<_>>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_tail_is_skipped_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"a\":1}\n{\"a\":2}\n{\"a\":").unwrap();
        #[derive(Deserialize, Serialize, Debug, PartialEq)]
        struct X {
            a: u32,
        }
        let xs: Vec<X> = read_jsonl(&p).unwrap();
        assert_eq!(xs, vec![X { a: 1 }, X { a: 2 }]);
        let mut w = JsonlWriter::append(&p).unwrap();
        w.write(&X { a: 3 }).unwrap();
        let xs: Vec<X> = read_jsonl(&p).unwrap();
        assert_eq!(xs.len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"a\":1}\nnope\n{\"a\":2}\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&p).unwrap_err();
        assert!(matches!(err, StoreError::Corrupt { line: 2, .. }));
    }
}
