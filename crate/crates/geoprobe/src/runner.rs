//! Run orchestration: the probe matrix, ablation stages, the free-generation
//! stage and concurrent execution into a [`RunStore`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::mpsc;
use std::time::Duration;

use geoprobe_core::bank::{Bank, CountryPair, Language, Ordering, PhrasingId, Polarity};
use geoprobe_core::freegen::{
    commit_logodds, filler_prompt, freegen_prompt, parse_letter_commit, signed_letter, slot_sign, ControlKind,
    GenerationRecord, Letter, ANSWER_SLOT,
};
use geoprobe_core::prompt::{
    assemble, neutralization_prompt, HedgeOverride, ModelProfile, PrefillOverride, ProbeSpec, PromptError,
    PromptParts, FACTORIAL_LANGUAGES,
};
use geoprobe_core::provider::{DistributionProvider, ProviderError};
use geoprobe_core::scoring::{score_query, MeasurementRecord, RecordFlags, RecordKey, RECORD_VERSION};
use geoprobe_core::synthetic::SyntheticModel;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank_io::{load_bank_file, BankLoadError};
use crate::client::HttpProvider;
use crate::manifest::{Ablations, ProviderConfig, RunManifest};
use crate::profiles::{ProfileError, ProfileRegistry};
use crate::store::{GapProbe, GapRecord, RunMeta, RunStore, StoreError, GAPS_FILE, GENERATIONS_FILE, RECORDS_FILE};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Bank(#[from] BankLoadError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model {model}: {source}")]
    Provider { model: String, source: ProviderError },
    #[error("{0}")]
    Config(String),
}

/// A manifest with its bank and profiles loaded and checked.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub manifest: RunManifest,
    pub bank: Bank,
    /// One profile per manifest model, in manifest order.
    pub profiles: Vec<ModelProfile>,
    pub run_id: String,
}

impl Experiment {
    pub fn load(manifest: RunManifest) -> Result<Self, RunError> {
        let bank = load_bank_file(&manifest.bank)?;
        let registry = match &manifest.profiles {
            Some(p) => ProfileRegistry::load(std::fs::File::open(p).map_err(ProfileError::Io)?)?,
            None => ProfileRegistry::builtin(),
        };
        let profiles = manifest
            .models
            .iter()
            .map(|m| registry.get(&m.profile).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(manifest, bank, profiles)
    }

    pub fn new(manifest: RunManifest, bank: Bank, profiles: Vec<ModelProfile>) -> Result<Self, RunError> {
        manifest.validate().map_err(|e| RunError::Config(e.to_string()))?;
        bank.validate().map_err(BankLoadError::from)?;
        for p in &profiles {
            p.validate()?;
        }
        bank.country(&manifest.target_country)
            .map_err(|_| RunError::Config(format!("target country `{}` is not in the bank", manifest.target_country)))?;
        if let Some(ids) = &manifest.scenarios {
            for id in ids {
                bank.scenario(id)
                    .map_err(|_| RunError::Config(format!("scenario `{id}` is not in the bank")))?;
            }
        }
        for (s, q) in manifest.language_pairs() {
            if !bank.languages.contains(&s) || !bank.languages.contains(&q) {
                return Err(RunError::Config(format!("language condition {s}/{q} is not covered by the bank")));
            }
        }
        let run_id = crate::store::run_id(&manifest, &bank, &profiles);
        Ok(Experiment {
            manifest,
            bank,
            profiles,
            run_id,
        })
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            run_id: self.run_id.clone(),
            manifest: self.manifest.clone(),
            bank: self.bank.clone(),
            profiles: self.profiles.clone(),
        }
    }

    pub fn store(&self) -> Result<RunStore, RunError> {
        Ok(RunStore::create(&self.manifest.output_dir, &self.meta())?)
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        match &self.manifest.scenarios {
            Some(ids) => ids.clone(),
            None => self.bank.scenarios.iter().map(|s| s.id.clone()).collect(),
        }
    }

    /// One provider per model, in manifest order.
    pub fn providers(&self) -> Result<Vec<Box<dyn DistributionProvider>>, RunError> {
        self.manifest
            .models
            .iter()
            .zip(&self.profiles)
            .map(|(m, profile)| -> Result<Box<dyn DistributionProvider>, RunError> {
                match &m.provider {
                    ProviderConfig::Synthetic { spec } => {
                        let mut spec = spec.clone();
                        spec.seed = spec.seed.wrapping_add(self.manifest.seed);
                        let model = SyntheticModel::new(spec, profile, &self.bank).map_err(|source| {
                            RunError::Provider {
                                model: profile.id.clone(),
                                source,
                            }
                        })?;
                        Ok(Box::new(model))
                    }
                    ProviderConfig::Http {
                        url,
                        top_k,
                        timeout_secs,
                    } => {
                        let mut c = HttpProvider::new(url, Duration::from_secs(*timeout_secs));
                        if let Some(k) = top_k {
                            c = c.with_top_k(*k);
                        }
                        Ok(Box::new(c))
                    }
                }
            })
            .collect()
    }
}

/// One forced-choice query.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureJob {
    pub model: usize,
    pub key: RecordKey,
    pub prompt: String,
}

#[derive(Clone, Copy)]
enum Variant {
    Plain,
    Neutralized,
}

struct Planner<'e> {
    exp: &'e Experiment,
    jobs: BTreeMap<RecordKey, MeasureJob>,
}

impl<'e> Planner<'e> {
    fn new(exp: &'e Experiment) -> Self {
        Planner {
            exp,
            jobs: BTreeMap::new(),
        }
    }

    fn add(
        &mut self,
        model: usize,
        pairs: &[CountryPair],
        languages: &[(Language, Language)],
        base: &ProbeSpec,
        variant: Variant,
    ) -> Result<(), RunError> {
        let profile = &self.exp.profiles[model];
        for scenario in self.exp.scenario_ids() {
            for pair in pairs {
                for &(sl, ql) in languages {
                    for ordering in Ordering::BOTH {
                        for polarity in [Polarity::Justified, Polarity::Unjustified] {
                            let mut spec = base.clone();
                            spec.scenario_language = sl;
                            spec.question_language = ql;
                            spec.ordering = ordering;
                            spec.polarity = polarity;
                            let parts = PromptParts::build(&self.exp.bank, &scenario, pair, &spec)
                                .map_err(|e| RunError::Prompt(e.into()))?;
                            let prompt = match variant {
                                Variant::Plain => assemble(profile, &parts, &spec)?,
                                Variant::Neutralized => neutralization_prompt(profile, &parts, &spec)?,
                            };
                            let key = RecordKey {
                                model_id: profile.id.clone(),
                                scenario_id: scenario.clone(),
                                pair: pair.clone(),
                                ordering,
                                polarity,
                                scenario_language: sl,
                                question_language: ql,
                                phrasing_id: spec.phrasing_id,
                                flags: RecordFlags {
                                    prefilled: prompt.prefilled,
                                    hedged: prompt.hedged,
                                    neutralized: prompt.neutralized,
                                },
                            };
                            self.jobs.entry(key.clone()).or_insert(MeasureJob {
                                model,
                                key,
                                prompt: prompt.text,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Vec<MeasureJob> {
        self.jobs.into_values().collect()
    }
}

fn default_spec() -> ProbeSpec {
    ProbeSpec::new(Language::En, Polarity::Justified, Ordering::Forward)
}

/// The main matrix: models × scenarios × real pairs × language conditions
/// × orderings × polarities, each profile at its defaults.
pub fn plan_main(exp: &Experiment) -> Result<Vec<MeasureJob>, RunError> {
    let mut p = Planner::new(exp);
    let pairs = exp.bank.real_pairs();
    let langs = exp.manifest.language_pairs();
    for m in 0..exp.profiles.len() {
        p.add(m, &pairs, &langs, &default_spec(), Variant::Plain)?;
    }
    Ok(p.finish())
}

/// Additional queries for the selected ablations. Each runs over every
/// declared language condition except the factorial, which crosses EN and ZH.
pub fn plan_ablations(exp: &Experiment, ablations: &Ablations) -> Result<Vec<MeasureJob>, RunError> {
    let mut p = Planner::new(exp);
    let pairs = exp.bank.real_pairs();
    let langs = exp.manifest.language_pairs();
    for (m, profile) in exp.profiles.iter().enumerate() {
        if ablations.hedge {
            let mut s = default_spec();
            s.hedge = if profile.hedge_enabled {
                HedgeOverride::ForceOff
            } else {
                HedgeOverride::ForceOn
            };
            p.add(m, &pairs, &langs, &s, Variant::Plain)?;
        }
        if ablations.phrasings {
            for ph in exp.bank.paired_phrasings() {
                if ph != PhrasingId::Default {
                    let mut s = default_spec();
                    s.phrasing_id = ph;
                    p.add(m, &pairs, &langs, &s, Variant::Plain)?;
                }
            }
        }
        if ablations.factorial {
            let fl: Vec<Language> = FACTORIAL_LANGUAGES
                .into_iter()
                .filter(|l| exp.bank.languages.contains(l))
                .collect();
            let crossed: Vec<(Language, Language)> =
                fl.iter().flat_map(|&s| fl.iter().map(move |&q| (s, q))).collect();
            p.add(m, &pairs, &crossed, &default_spec(), Variant::Plain)?;
        }
        if ablations.neutralization && profile.chat_template.has_system_slot() {
            p.add(m, &pairs, &langs, &default_spec(), Variant::Neutralized)?;
        }
        if ablations.fictional {
            p.add(m, &exp.bank.fictional_pairs(), &langs, &default_spec(), Variant::Plain)?;
        }
        if ablations.no_prefill && profile.prefill_token.is_some() {
            let mut s = default_spec();
            s.prefill = PrefillOverride::None;
            p.add(m, &pairs, &langs, &s, Variant::Plain)?;
        }
    }
    Ok(p.finish())
}

/// Closed-form size of the main matrix.
pub fn expected_main_count(exp: &Experiment) -> usize {
    let n = exp.bank.real_countries().count();
    exp.profiles.len() * exp.scenario_ids().len() * (n * (n - 1) / 2) * exp.manifest.language_pairs().len() * 2 * 2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecOutcome {
    pub planned: usize,
    pub already_present: usize,
    pub written: usize,
    pub gaps: usize,
    /// Left for a later invocation because of the query limit.
    pub deferred: usize,
}

fn retry<T>(retries: u32, mut f: impl FnMut() -> Result<T, ProviderError>) -> (Result<T, ProviderError>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f() {
            Err(e) if e.is_retryable() && attempt <= retries => {
                std::thread::sleep(Duration::from_millis(10u64 << attempt.min(6)));
            }
            r => return (r, attempt),
        }
    }
}

/// Fan `items` out over `workers` threads; results are handled in the
/// calling thread in completion order.
fn fan_out<J: Sync, R: Send>(
    items: &[J],
    workers: usize,
    work: impl Fn(&J) -> R + Sync,
    mut sink: impl FnMut(R) -> Result<(), RunError>,
) -> Result<(), RunError> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            let tx = tx.clone();
            let (next, work) = (&next, &work);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                let Some(item) = items.get(i) else { break };
                if tx.send(work(item)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut result = Ok(());
        for r in rx {
            if result.is_ok() {
                result = sink(r);
                if result.is_err() {
                    // stop handing out work
                    next.store(items.len(), AtomicOrdering::Relaxed);
                }
            }
        }
        result
    })
}

/// Run the queries not yet in the store. Failures become gaps.
pub fn execute(
    exp: &Experiment,
    store: &RunStore,
    providers: &[Box<dyn DistributionProvider>],
    jobs: Vec<MeasureJob>,
) -> Result<ExecOutcome, RunError> {
    let have = store.record_keys()?;
    let planned = jobs.len();
    let mut todo: Vec<MeasureJob> = jobs.into_iter().filter(|j| !have.contains(&j.key)).collect();
    let already_present = planned - todo.len();
    let mut deferred = 0;
    if let Some(limit) = exp.manifest.limit {
        if todo.len() > limit {
            deferred = todo.len() - limit;
            todo.truncate(limit);
        }
    }
    let mut records = store.writer(RECORDS_FILE)?;
    let mut gaps = store.writer(GAPS_FILE)?;
    let mut out = ExecOutcome {
        planned,
        already_present,
        deferred,
        ..Default::default()
    };
    let retries = exp.manifest.retries;
    fan_out(
        &todo,
        exp.manifest.concurrency,
        |job| {
            let profile = &exp.profiles[job.model];
            let mut requested = profile.answer_variants_a.clone();
            requested.extend(profile.answer_variants_b.iter().cloned());
            let (r, attempts) = retry(retries, || providers[job.model].next_token_distribution(&job.prompt, &requested));
            (job.key.clone(), r.map(|d| score_query(&d, profile)), attempts)
        },
        |(key, r, attempts)| {
            match r {
                Ok(score) => {
                    records.write(&MeasurementRecord::from_score(key, score))?;
                    out.written += 1;
                }
                Err(e) => {
                    gaps.write(&GapRecord {
                        probe: GapProbe::Measurement { key },
                        error: e.to_string(),
                        attempts,
                    })?;
                    out.gaps += 1;
                }
            }
            Ok(())
        },
    )?;
    drop(records);
    drop(gaps);
    store.compact()?;
    Ok(out)
}

/// One free-generation item.
#[derive(Clone, Debug, PartialEq)]
pub struct GenJob {
    pub model: usize,
    pub key: RecordKey,
    pub control: ControlKind,
    pub designated: String,
    pub prompt: String,
}

fn item_rank(seed: u64, scenario: &str, pair: &CountryPair) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scenario.as_bytes());
    h.update([0]);
    h.update(pair.0.as_bytes());
    h.update([0]);
    h.update(pair.1.as_bytes());
    h.finalize().into()
}

/// Free-generation items for every post-trained model: scenario × pair
/// items containing the target, picked by a seeded hash, each asked in both
/// orderings so that position preferences cancel in the letter average.
/// Asked with the justified question in the first language condition.
pub fn plan_freegen(exp: &Experiment) -> Result<Vec<GenJob>, RunError> {
    let cfg = &exp.manifest.freegen;
    let target = &exp.manifest.target_country;
    let (sl, ql) = exp.manifest.language_pairs()[0];
    let mut items: Vec<(String, CountryPair)> = Vec::new();
    for s in exp.scenario_ids() {
        for pair in exp.bank.real_pairs() {
            if pair.contains(target) {
                items.push((s.clone(), pair));
            }
        }
    }
    items.sort_by_key(|(s, p)| item_rank(exp.manifest.seed, s, p));
    let mut picks: Vec<(String, CountryPair, Ordering)> = items
        .into_iter()
        .flat_map(|(s, p)| Ordering::BOTH.map(|o| (s.clone(), p.clone(), o)))
        .take(cfg.generations)
        .collect();
    picks.sort_by(|a, b| (&a.0, &a.1, a.2).cmp(&(&b.0, &b.1, b.2)));
    let names: Vec<String> = exp
        .bank
        .countries
        .iter()
        .flat_map(|c| c.display_name.0.values().cloned())
        .collect();
    let mut jobs = Vec::new();
    for (m, profile) in exp.profiles.iter().enumerate() {
        if !profile.is_post_trained {
            continue;
        }
        for (scenario, pair, ordering) in &picks {
            let mut spec = ProbeSpec::new(sl, Polarity::Justified, *ordering);
            spec.question_language = ql;
            let parts = PromptParts::build(&exp.bank, scenario, pair, &spec).map_err(|e| RunError::Prompt(e.into()))?;
            let prompt = freegen_prompt(profile, &parts, &spec)?;
            let key = RecordKey {
                model_id: profile.id.clone(),
                scenario_id: scenario.clone(),
                pair: pair.clone(),
                ordering: *ordering,
                polarity: Polarity::Justified,
                scenario_language: sl,
                question_language: ql,
                phrasing_id: PhrasingId::Default,
                flags: RecordFlags::default(),
            };
            let mut controls = vec![ControlKind::OwnReasoning];
            if cfg.neutral_filler_control {
                controls.push(ControlKind::NeutralFiller);
            }
            for control in controls {
                let text = match control {
                    ControlKind::OwnReasoning => prompt.text.clone(),
                    ControlKind::NeutralFiller => {
                        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                        filler_prompt(&prompt, &cfg.filler, &refs).map_err(|e| RunError::Config(e.to_string()))?
                    }
                };
                jobs.push(GenJob {
                    model: m,
                    key: key.clone(),
                    control,
                    designated: target.clone(),
                    prompt: text,
                });
            }
        }
    }
    Ok(jobs)
}

fn base_record(job: &GenJob) -> GenerationRecord {
    let k = &job.key;
    GenerationRecord {
        record_version: RECORD_VERSION,
        model_id: k.model_id.clone(),
        scenario_id: k.scenario_id.clone(),
        pair: k.pair.clone(),
        ordering: k.ordering,
        scenario_language: k.scenario_language,
        question_language: k.question_language,
        polarity: k.polarity,
        phrasing_id: k.phrasing_id,
        designated: job.designated.clone(),
        text: String::new(),
        n_tokens: 0,
        letter_commit: None,
        commit_index: None,
        commit_logodds: None,
        designated_logodds: None,
        control_kind: job.control,
    }
}

/// Run one generation item against a provider.
pub fn run_generation(
    job: &GenJob,
    profile: &ModelProfile,
    provider: &dyn DistributionProvider,
    max_tokens: usize,
    filler: &str,
) -> Result<GenerationRecord, ProviderError> {
    let sign = slot_sign(&job.key.pair, job.key.ordering, &job.designated)
        .ok_or_else(|| ProviderError::InvalidRequest("designated country not in pair".into()))?;
    let mut rec = base_record(job);
    match job.control {
        ControlKind::OwnReasoning => {
            let g = provider.generate_greedy(&job.prompt, max_tokens, &[])?;
            rec.text = g.text.clone();
            rec.n_tokens = g.tokens.len();
            if let Some((letter, idx)) = parse_letter_commit(&g) {
                if let Ok(lo) = commit_logodds(&g, idx, profile) {
                    rec.letter_commit = Some(signed_letter(letter, sign));
                    rec.commit_index = Some(idx);
                    rec.commit_logodds = Some(lo);
                    rec.designated_logodds = Some(lo * sign);
                }
            }
        }
        ControlKind::NeutralFiller => {
            let mut requested = profile.answer_variants_a.clone();
            requested.extend(profile.answer_variants_b.iter().cloned());
            let d = provider.next_token_distribution(&job.prompt, &requested)?;
            let score = score_query(&d, profile);
            let letter = score.signed_logodds.and_then(|lo| {
                if lo > 0.0 {
                    Some(Letter::A)
                } else if lo < 0.0 {
                    Some(Letter::B)
                } else {
                    None
                }
            });
            // the single read position is the forced answer slot
            let shown = match letter {
                Some(Letter::A) => "A",
                Some(Letter::B) => "B",
                None => "",
            };
            rec.text = format!("{filler}{ANSWER_SLOT}{shown}");
            rec.n_tokens = 1;
            if let (Some(l), Some(lo)) = (letter, score.signed_logodds) {
                rec.letter_commit = Some(signed_letter(l, sign));
                rec.commit_index = Some(0);
                rec.commit_logodds = Some(lo);
                rec.designated_logodds = Some(lo * sign);
            }
        }
    }
    Ok(rec)
}

pub fn execute_freegen(
    exp: &Experiment,
    store: &RunStore,
    providers: &[Box<dyn DistributionProvider>],
    jobs: Vec<GenJob>,
) -> Result<ExecOutcome, RunError> {
    let have = store.generation_keys()?;
    let planned = jobs.len();
    let todo: Vec<GenJob> = jobs
        .into_iter()
        .filter(|j| !have.contains(&(j.key.clone(), j.control)))
        .collect();
    let mut out = ExecOutcome {
        planned,
        already_present: planned - todo.len(),
        ..Default::default()
    };
    let mut gens = store.writer(GENERATIONS_FILE)?;
    let mut gaps = store.writer(GAPS_FILE)?;
    let cfg = &exp.manifest.freegen;
    fan_out(
        &todo,
        exp.manifest.concurrency,
        |job| {
            let (r, attempts) = retry(exp.manifest.retries, || {
                run_generation(job, &exp.profiles[job.model], providers[job.model].as_ref(), cfg.max_tokens, &cfg.filler)
            });
            (job.key.clone(), job.control, r, attempts)
        },
        |(key, control_kind, r, attempts)| {
            match r {
                Ok(rec) => {
                    gens.write(&rec)?;
                    out.written += 1;
                }
                Err(e) => {
                    gaps.write(&GapRecord {
                        probe: GapProbe::Generation { key, control_kind },
                        error: e.to_string(),
                        attempts,
                    })?;
                    out.gaps += 1;
                }
            }
            Ok(())
        },
    )?;
    drop(gens);
    drop(gaps);
    store.compact()?;
    Ok(out)
}

/// What a `run` invocation executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub main: bool,
    pub ablations: bool,
    pub freegen: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub run_id: String,
    pub main: ExecOutcome,
    pub ablations: ExecOutcome,
    pub freegen: ExecOutcome,
}

/// Load providers and execute the requested stages.
pub fn run(exp: &Experiment, stages: Stages) -> Result<(RunStore, RunSummary), RunError> {
    let store = exp.store()?;
    let providers = exp.providers()?;
    let mut summary = RunSummary {
        run_id: exp.run_id.clone(),
        ..Default::default()
    };
    if stages.main {
        summary.main = execute(exp, &store, &providers, plan_main(exp)?)?;
    }
    if stages.ablations && exp.manifest.ablations.any() {
        summary.ablations = execute(exp, &store, &providers, plan_ablations(exp, &exp.manifest.ablations)?)?;
    }
    if stages.freegen && exp.manifest.freegen.enabled {
        summary.freegen = execute_freegen(exp, &store, &providers, plan_freegen(exp)?)?;
    }
    Ok((store, summary))
}

/// Locate a run directory from a manifest's output dir and run id.
pub fn run_dir(output_dir: &Path, run_id: &str) -> std::path::PathBuf {
    output_dir.join(run_id)
}
