//! Experiment manifests.
//!
//! Relative paths resolve against the manifest's own directory.

use std::path::{Path, PathBuf};

use geoprobe_core::bank::Language;
use geoprobe_core::coherence::{DEFAULT_THRESHOLD, SENSITIVITY_THRESHOLDS};
use geoprobe_core::freegen::{DEFAULT_GENERATIONS, DEFAULT_MAX_TOKENS, NEUTRAL_FILLER};
use geoprobe_core::synthetic::SyntheticModelSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COMPLIANCE_TIERS: [f64; 3] = [0.97, 0.4, 0.1];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("manifest: {0}")]
    Invalid(String),
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Synthetic {
        #[serde(default)]
        spec: SyntheticModelSpec,
    },
    Http {
        url: String,
        #[serde(default)]
        top_k: Option<usize>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub profile: String,
    pub provider: ProviderConfig,
}

/// `"en"` or `{"scenario": "zh", "question": "en"}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LanguageCondition {
    Same(Language),
    Crossed { scenario: Language, question: Language },
}

impl LanguageCondition {
    pub fn languages(self) -> (Language, Language) {
        match self {
            LanguageCondition::Same(l) => (l, l),
            LanguageCondition::Crossed { scenario, question } => (scenario, question),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(default = "default_coherence")]
    pub coherence: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: Vec<f64>,
    /// Lower bounds of compliance tiers 1, 2 and 3.
    #[serde(default = "default_tiers")]
    pub compliance_tiers: [f64; 3],
}

fn default_coherence() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_sensitivity() -> Vec<f64> {
    SENSITIVITY_THRESHOLDS.to_vec()
}
fn default_tiers() -> [f64; 3] {
    COMPLIANCE_TIERS
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            coherence: default_coherence(),
            sensitivity: default_sensitivity(),
            compliance_tiers: default_tiers(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Every model again with its hedge default inverted.
    #[serde(default)]
    pub hedge: bool,
    /// All paired question phrasings besides the default.
    #[serde(default)]
    pub phrasings: bool,
    /// Scenario language × question language over EN and ZH.
    #[serde(default)]
    pub factorial: bool,
    /// The neutralization system message, for profiles with a system slot.
    #[serde(default)]
    pub neutralization: bool,
    /// Pairs of invented countries.
    #[serde(default)]
    pub fictional: bool,
    /// Prefilled profiles without their prefill.
    #[serde(default)]
    pub no_prefill: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.hedge || self.phrasings || self.factorial || self.neutralization || self.fictional || self.no_prefill
    }

    pub fn all() -> Self {
        Ablations {
            hedge: true,
            phrasings: true,
            factorial: true,
            neutralization: true,
            fictional: true,
            no_prefill: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreegenConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_filler")]
    pub filler: String,
    #[serde(default = "yes")]
    pub neutral_filler_control: bool,
}

fn default_generations() -> usize {
    DEFAULT_GENERATIONS
}
fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}
fn default_filler() -> String {
    NEUTRAL_FILLER.to_string()
}
fn yes() -> bool {
    true
}

impl Default for FreegenConfig {
    fn default() -> Self {
        FreegenConfig {
            enabled: false,
            generations: DEFAULT_GENERATIONS,
            max_tokens: DEFAULT_MAX_TOKENS,
            filler: default_filler(),
            neutral_filler_control: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub bank: PathBuf,
    /// Profile registry; the built-in registry when absent.
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    pub models: Vec<ModelEntry>,
    #[serde(default = "default_languages")]
    pub languages: Vec<LanguageCondition>,
    /// Restrict the run to these scenario ids.
    #[serde(default)]
    pub scenarios: Option<Vec<String>>,
    #[serde(default = "default_target")]
    pub target_country: String,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub freegen: FreegenConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Added to every synthetic spec's noise seed; also picks freegen items.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Stop after this many new queries (for staged or interrupted runs).
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_languages() -> Vec<LanguageCondition> {
    vec![LanguageCondition::Same(Language::En)]
}
fn default_target() -> String {
    "CN".into()
}
fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| ManifestError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    /// Read a manifest file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)?;
        let mut m = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve_paths(base);
        Ok(m)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.bank);
        if let Some(p) = &mut self.profiles {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Invalid(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.languages.is_empty() {
            return bad("at least one language condition is required".into());
        }
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        let t = &self.thresholds;
        if !unit(t.coherence) {
            return bad(format!("coherence threshold {} outside (0, 1]", t.coherence));
        }
        if let Some(x) = t.sensitivity.iter().find(|x| !unit(**x)) {
            return bad(format!("sensitivity threshold {x} outside (0, 1]"));
        }
        if t.compliance_tiers.iter().any(|x| !unit(*x)) || !t.compliance_tiers.windows(2).all(|w| w[0] > w[1]) {
            return bad("compliance tiers must be decreasing and in (0, 1]".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.freegen.generations == 0 || self.freegen.max_tokens == 0 {
            return bad("freegen generations and max_tokens must be at least 1".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.profile.as_str()) {
                return bad(format!("model `{}` listed twice", m.profile));
            }
        }
        Ok(())
    }

    pub fn language_pairs(&self) -> Vec<(Language, Language)> {
        let mut v: Vec<_> = self.languages.iter().map(|c| c.languages()).collect();
        v.dedup();
        v
    }

    /// Compliance tier (1 to 4) of a mean compliance.
    pub fn compliance_tier(&self, compliance: f64) -> u8 {
        let t = &self.thresholds.compliance_tiers;
        if compliance >= t[0] {
            1
        } else if compliance >= t[1] {
            2
        } else if compliance >= t[2] {
            3
        } else {
            4
        }
    }
}
