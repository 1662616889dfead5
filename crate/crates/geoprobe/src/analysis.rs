//! Aggregation of persisted records into a [`ReportDocument`].
//!
//! Everything here is recomputed from the run directory; reports carry no
//! state of their own.

use std::collections::{BTreeMap, BTreeSet};

use geoprobe_core::bank::{Bank, Bloc, CountryPair, Heat, Language, PhoneticIdentity, PhrasingId};
use geoprobe_core::coherence::{cell_means, filter, flip_fraction, polarity_means_for, exclusion_diagnostic, CoherenceReport};
use geoprobe_core::freegen::{summarize, ControlKind, FreegenSummary, GenerationRecord};
use geoprobe_core::math::{mean, sigmoid};
use geoprobe_core::prompt::ModelProfile;
use geoprobe_core::scoring::{
    country_favourability, pair_scores, scenario_favourability, CellKey, CellProblem, MeasurementRecord, PairScore,
    RecordFlags,
};
use geoprobe_core::stats::{
    cluster_robust_summary, exact_binomial_two_sided, maker_binomial, maker_direction_tests, one_sample_t, paired_t,
    MakerShift, StatsSummary,
};
use serde::{Deserialize, Serialize};

use crate::store::{GapRecord, RunMeta};

pub const CI_DISCLOSURE: &str = "95% intervals are cluster-robust with scenario-type clusters: \
SE = sd(cluster means) / sqrt(G), half-width = t(0.975, G - 1) * SE. Paired comparisons use paired t-tests; \
p-values are two-sided.";

/// Bias magnitude below which freegen and forced-choice signs need not agree.
pub const SIGN_AGREEMENT_BAND: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Favourability {
    pub value: f64,
    pub ci_half_width: Option<f64>,
    pub p_value: Option<f64>,
    pub n_scenarios: usize,
    pub n_pairs: usize,
    pub n_clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    pub label: String,
    pub family: String,
    pub post_trained: bool,
    pub scenario_language: Language,
    pub question_language: Language,
    /// Target-country favourability over the coherent subset.
    pub favourability: Option<Favourability>,
    pub favourability_all_scenarios: Option<f64>,
    pub mean_compliance: Option<f64>,
    pub compliance_tier: Option<u8>,
    /// Tier 2 or worse: conclusions depend on a partial A/B reading.
    pub compliance_dependent: bool,
    pub low_compliance_records: usize,
    /// Std across real countries of the mean choice probability, in pp.
    pub spread_pp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDelta {
    pub family: String,
    pub base_model: String,
    pub post_model: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub base: f64,
    pub post: f64,
    pub delta: f64,
    pub post_compliance: Option<f64>,
    pub maker_bloc: Bloc,
    pub aligned: bool,
    pub signed_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MakerSection {
    pub scenario_language: Language,
    pub question_language: Language,
    pub target_bloc: Bloc,
    pub n_families: usize,
    pub n_aligned: usize,
    pub binomial: Option<StatsSummary>,
    pub signed_magnitude: Option<StatsSummary>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageShift {
    pub model_id: String,
    pub language: Language,
    pub reference: Language,
    pub country: String,
    /// Paired over coherent scenarios: `mean` is the shift.
    pub shift: Option<StatsSummary>,
    pub absolute: Option<f64>,
}

/// Population tests on the post-trained target shifts for one language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageShiftTests {
    pub language: Language,
    pub n_post_trained: usize,
    pub n_toward_target: usize,
    pub binomial: Option<StatsSummary>,
    /// Post-trained shift against the matched base shift, per family.
    pub paired_vs_base: Option<StatsSummary>,
    pub n_families: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialCell {
    pub scenario_language: Language,
    pub question_language: Language,
    pub favourability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialTable {
    pub model_id: String,
    pub cells: Vec<FactorialCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentRow {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub opponent: String,
    pub opponent_bloc: Bloc,
    pub favourability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotColdRow {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub hot: Option<f64>,
    pub cold: Option<f64>,
    pub hot_minus_cold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub scenario_type: String,
    pub favourability: f64,
    pub n_scenarios: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FictionalRow {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub country: String,
    pub phonetic_identity: PhoneticIdentity,
    pub favourability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub ablation: String,
    pub baseline: f64,
    pub variant: f64,
    pub delta: f64,
    pub variant_compliance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefillRow {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub prefill_token: String,
    pub naive_compliance: Option<f64>,
    pub corrected_compliance: Option<f64>,
    pub naive_favourability: Option<f64>,
    pub corrected_favourability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub model_id: String,
    pub justified_unjustified_correlation: Option<f64>,
    pub n_scenarios: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreegenRow {
    pub model_id: String,
    pub label: String,
    pub own_reasoning: FreegenSummary,
    pub neutral_filler: Option<FreegenSummary>,
    pub forced: Option<f64>,
    /// `sign(commit mean) == sign(forced)`.
    pub sign_agreement: Option<bool>,
    /// Whether |forced| is outside the tolerance band, so agreement is expected.
    pub agreement_expected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub threshold: f64,
    pub n_included: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSection {
    pub threshold: f64,
    pub n_scenarios: usize,
    pub included: Vec<String>,
    pub sensitivity: Vec<SensitivityRow>,
    pub reports: Vec<CoherenceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: CellKey,
    pub problem: CellProblem,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub records: usize,
    pub expected_main_records: usize,
    pub main_records: usize,
    pub generations: usize,
    pub gaps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub run_id: String,
    pub target_country: String,
    pub disclosure: String,
    pub counts: Counts,
    pub coherence: CoherenceSection,
    pub models: Vec<ModelRow>,
    pub post_training: Vec<FamilyDelta>,
    pub maker_tests: Option<MakerSection>,
    pub language_shifts: Vec<LanguageShift>,
    pub language_shift_tests: Vec<LanguageShiftTests>,
    pub factorial: Vec<FactorialTable>,
    pub opponents: Vec<OpponentRow>,
    pub hot_cold: Vec<HotColdRow>,
    pub scenario_types: Vec<TypeRow>,
    pub fictional: Vec<FictionalRow>,
    pub ablations: Vec<AblationDelta>,
    pub prefill: Vec<PrefillRow>,
    pub exclusion: Vec<ExclusionRow>,
    pub freegen: Vec<FreegenRow>,
    pub gaps: Vec<GapRecord>,
    pub skipped_cells: Vec<SkippedCell>,
}

/// Flags of a profile's default forced-choice query.
pub fn main_flags(profile: &ModelProfile) -> RecordFlags {
    RecordFlags {
        prefilled: profile.prefill_token.is_some(),
        hedged: profile.hedge_enabled,
        neutralized: false,
    }
}

/// Country whose favourability a language's shift is also reported for.
pub fn home_country(language: Language) -> Option<&'static str> {
    match language {
        Language::Fr => Some("FR"),
        Language::Zh => Some("CN"),
        Language::En => None,
    }
}

struct Ctx<'a> {
    meta: &'a RunMeta,
    bank: &'a Bank,
    target: &'a str,
    scores: Vec<PairScore>,
    coherent: BTreeSet<String>,
    conditions: Vec<(Language, Language)>,
}

impl<'a> Ctx<'a> {
    fn profile(&self, id: &str) -> Option<&'a ModelProfile> {
        self.meta.profiles.iter().find(|p| p.id == id)
    }

    fn real(&self, pair: &CountryPair) -> bool {
        [&pair.0, &pair.1]
            .iter()
            .all(|c| self.bank.country(c).is_ok_and(|c| !c.is_fictional()))
    }

    fn fictional(&self, pair: &CountryPair) -> bool {
        [&pair.0, &pair.1]
            .iter()
            .all(|c| self.bank.country(c).is_ok_and(|c| c.is_fictional()))
    }

    fn select(
        &self,
        model: &str,
        cond: (Language, Language),
        flags: RecordFlags,
        phrasing: PhrasingId,
        fictional: bool,
        coherent_only: bool,
    ) -> Vec<PairScore> {
        self.scores
            .iter()
            .filter(|s| {
                let c = &s.cell;
                c.model_id == model
                    && (c.scenario_language, c.question_language) == cond
                    && c.flags == flags
                    && c.phrasing_id == phrasing
                    && if fictional { self.fictional(&c.pair) } else { self.real(&c.pair) }
                    && (!coherent_only || self.coherent.contains(&c.scenario_id))
            })
            .cloned()
            .collect()
    }

    fn main(&self, profile: &ModelProfile, cond: (Language, Language), coherent_only: bool) -> Vec<PairScore> {
        self.select(&profile.id, cond, main_flags(profile), PhrasingId::Default, false, coherent_only)
    }

    fn scenario_type(&self, id: &str) -> String {
        self.bank
            .scenario(id)
            .map(|s| s.scenario_type.name().to_string())
            .unwrap_or_else(|_| id.to_string())
    }

    fn favourability(&self, scores: &[PairScore], country: &str) -> Option<Favourability> {
        let cs = country_favourability(scores, country).ok()?;
        let per_scenario = scenario_favourability(scores, country);
        let clustered: Vec<(String, f64)> = per_scenario
            .iter()
            .map(|(id, v)| (self.scenario_type(id), *v))
            .collect();
        let stats = cluster_robust_summary(&clustered).ok();
        Some(Favourability {
            value: cs.favourability,
            ci_half_width: stats.as_ref().and_then(|s| s.ci_half_width),
            p_value: stats.as_ref().map(|s| s.p_value),
            n_scenarios: cs.n_scenarios,
            n_pairs: cs.n_pairs,
            n_clusters: clustered.iter().map(|c| &c.0).collect::<BTreeSet<_>>().len(),
        })
    }

    fn spread_pp(&self, scores: &[PairScore]) -> Option<f64> {
        let mut shares = Vec::new();
        for c in self.bank.real_countries() {
            let ps: Vec<f64> = scores
                .iter()
                .filter_map(|s| s.favourability_for(&c.code))
                .map(sigmoid)
                .collect();
            if let Some(m) = mean(&ps) {
                shares.push(100.0 * m);
            }
        }
        if shares.len() < 2 {
            return None;
        }
        let m = mean(&shares)?;
        Some((shares.iter().map(|s| (s - m).powi(2)).sum::<f64>() / shares.len() as f64).sqrt())
    }
}

fn mean_compliance(scores: &[PairScore]) -> Option<f64> {
    mean(&scores.iter().map(|s| s.mean_compliance).collect::<Vec<_>>())
}

fn mean_compliance_records<'r>(rs: impl Iterator<Item = &'r MeasurementRecord>) -> Option<f64> {
    mean(&rs.map(|r| r.compliance).collect::<Vec<_>>())
}

/// Build the full report from persisted data.
pub fn analyze(
    meta: &RunMeta,
    records: &[MeasurementRecord],
    generations: &[GenerationRecord],
    gaps: &[GapRecord],
) -> ReportDocument {
    let manifest = &meta.manifest;
    let bank = &meta.bank;
    let target = manifest.target_country.as_str();
    let set = pair_scores(records);
    let conditions = manifest.language_pairs();
    let scenario_ids: Vec<String> = match &manifest.scenarios {
        Some(ids) => ids.clone(),
        None => bank.scenarios.iter().map(|s| s.id.clone()).collect(),
    };

    let mut ctx = Ctx {
        meta,
        bank,
        target,
        scores: set.scores,
        coherent: BTreeSet::new(),
        conditions: conditions.clone(),
    };

    // coherence census over every model × declared language condition
    let mut census_scores = Vec::new();
    for p in &meta.profiles {
        for &cond in &conditions {
            census_scores.extend(ctx.main(p, cond, false));
        }
    }
    let means = cell_means(&census_scores, target);
    let mut thresholds: Vec<f64> = manifest.thresholds.sensitivity.clone();
    if !thresholds.contains(&manifest.thresholds.coherence) {
        thresholds.push(manifest.thresholds.coherence);
    }
    thresholds.sort_by(f64::total_cmp);
    let reports: Vec<CoherenceReport> = scenario_ids
        .iter()
        .filter_map(|id| flip_fraction(id, means.get(id).map(Vec::as_slice).unwrap_or(&[]), &thresholds).ok())
        .collect();
    let ids = || scenario_ids.iter().map(String::as_str);
    let included = filter(ids(), &reports, manifest.thresholds.coherence).unwrap_or_default();
    let sensitivity = thresholds
        .iter()
        .map(|&t| SensitivityRow {
            threshold: t,
            n_included: filter(ids(), &reports, t).map(|s| s.len()).unwrap_or(0),
        })
        .collect();
    ctx.coherent = included.clone();
    let coherence = CoherenceSection {
        threshold: manifest.thresholds.coherence,
        n_scenarios: scenario_ids.len(),
        included: included.into_iter().collect(),
        sensitivity,
        reports,
    };

    let models = model_rows(&ctx, records);
    let (post_training, maker_tests) = post_training(&ctx, &models);
    let (language_shifts, language_shift_tests) = language_shifts(&ctx);

    let n_real = bank.real_countries().count();
    let expected_main = meta.profiles.len() * scenario_ids.len() * n_real * n_real.saturating_sub(1) / 2 * conditions.len() * 4;
    let main_records = records
        .iter()
        .filter(|r| {
            ctx.profile(&r.model_id).is_some_and(|p| r.flags == main_flags(p))
                && r.phrasing_id == PhrasingId::Default
                && conditions.contains(&(r.scenario_language, r.question_language))
                && ctx.real(&r.pair)
        })
        .count();

    ReportDocument {
        run_id: meta.run_id.clone(),
        target_country: target.to_string(),
        disclosure: CI_DISCLOSURE.to_string(),
        counts: Counts {
            records: records.len(),
            expected_main_records: expected_main,
            main_records,
            generations: generations.len(),
            gaps: gaps.len(),
        },
        coherence,
        post_training,
        maker_tests,
        language_shifts,
        language_shift_tests,
        factorial: factorial(&ctx),
        opponents: opponents(&ctx),
        hot_cold: hot_cold(&ctx),
        scenario_types: scenario_types(&ctx),
        fictional: fictional(&ctx),
        ablations: ablations(&ctx),
        prefill: prefill(&ctx, records),
        exclusion: exclusion(&ctx),
        freegen: freegen(&ctx, &models, generations),
        models,
        gaps: gaps.to_vec(),
        skipped_cells: set
            .skipped
            .into_iter()
            .map(|(cell, problem)| SkippedCell { cell, problem })
            .collect(),
    }
}

fn model_rows(ctx: &Ctx, records: &[MeasurementRecord]) -> Vec<ModelRow> {
    let m = &ctx.meta.manifest;
    let mut rows = Vec::new();
    for p in &ctx.meta.profiles {
        for &cond in &ctx.conditions {
            let coherent = ctx.main(p, cond, true);
            let all = ctx.main(p, cond, false);
            let flags = main_flags(p);
            let recs = || {
                records.iter().filter(move |r| {
                    r.model_id == p.id
                        && (r.scenario_language, r.question_language) == cond
                        && r.flags == flags
                        && r.phrasing_id == PhrasingId::Default
                        && ctx.real(&r.pair)
                })
            };
            let compliance = mean_compliance_records(recs());
            let tier = compliance.map(|c| m.compliance_tier(c));
            rows.push(ModelRow {
                model_id: p.id.clone(),
                label: p.label().to_string(),
                family: p.family.clone(),
                post_trained: p.is_post_trained,
                scenario_language: cond.0,
                question_language: cond.1,
                favourability: ctx.favourability(&coherent, ctx.target),
                favourability_all_scenarios: country_favourability(&all, ctx.target).ok().map(|c| c.favourability),
                mean_compliance: compliance,
                compliance_tier: tier,
                compliance_dependent: tier.is_some_and(|t| t >= 2),
                low_compliance_records: recs().filter(|r| r.is_low_compliance()).count(),
                spread_pp: ctx.spread_pp(&coherent),
            });
        }
    }
    rows
}

fn row<'r>(rows: &'r [ModelRow], model: &str, cond: (Language, Language)) -> Option<&'r ModelRow> {
    rows.iter()
        .find(|r| r.model_id == model && (r.scenario_language, r.question_language) == cond)
}

/// Base and post-trained profile per family, when both are present.
fn families<'p>(profiles: &'p [ModelProfile]) -> Vec<(&'p ModelProfile, &'p ModelProfile)> {
    let mut by: BTreeMap<&str, (Option<&ModelProfile>, Option<&ModelProfile>)> = BTreeMap::new();
    let mut order = Vec::new();
    for p in profiles {
        if !by.contains_key(p.family.as_str()) {
            order.push(p.family.as_str());
        }
        let e = by.entry(&p.family).or_default();
        if p.is_post_trained {
            e.1 = e.1.or(Some(p));
        } else {
            e.0 = e.0.or(Some(p));
        }
    }
    order
        .into_iter()
        .filter_map(|f| match by[f] {
            (Some(b), Some(p)) => Some((b, p)),
            _ => None,
        })
        .collect()
}

fn post_training(ctx: &Ctx, rows: &[ModelRow]) -> (Vec<FamilyDelta>, Option<MakerSection>) {
    let target_bloc = ctx.bank.country(ctx.target).map(|c| c.bloc).unwrap_or(Bloc::Chinese);
    let mut deltas = Vec::new();
    for &cond in &ctx.conditions {
        for (base, post) in families(&ctx.meta.profiles) {
            let (Some(b), Some(p)) = (row(rows, &base.id, cond), row(rows, &post.id, cond)) else {
                continue;
            };
            let (Some(bf), Some(pf)) = (&b.favourability, &p.favourability) else {
                continue;
            };
            let shift = MakerShift::new(&post.family, pf.value - bf.value, post.maker_bloc.as_bloc(), target_bloc);
            deltas.push(FamilyDelta {
                family: post.family.clone(),
                base_model: base.id.clone(),
                post_model: post.id.clone(),
                scenario_language: cond.0,
                question_language: cond.1,
                base: bf.value,
                post: pf.value,
                delta: shift.delta,
                post_compliance: p.mean_compliance,
                maker_bloc: post.maker_bloc.as_bloc(),
                aligned: shift.aligned,
                signed_magnitude: shift.signed_magnitude(),
            });
        }
    }
    let primary = ctx.conditions[0];
    let shifts: Vec<MakerShift> = deltas
        .iter()
        .filter(|d| (d.scenario_language, d.question_language) == primary)
        .map(|d| MakerShift::new(&d.family, d.delta, d.maker_bloc, target_bloc))
        .collect();
    let maker = (!shifts.is_empty()).then(|| {
        let (binomial, signed, note) = match maker_direction_tests(&shifts) {
            Ok(t) => (Some(t.binomial), Some(t.signed_magnitude), None),
            Err(e) => (maker_binomial(&shifts).ok(), None, Some(format!("signed-magnitude t-test undefined: {e}"))),
        };
        MakerSection {
            scenario_language: primary.0,
            question_language: primary.1,
            target_bloc,
            n_families: shifts.len(),
            n_aligned: shifts.iter().filter(|s| s.aligned).count(),
            binomial,
            signed_magnitude: signed,
            note,
        }
    });
    (deltas, maker)
}

/// Per-scenario favourability in two conditions over their common scenarios.
fn paired_scenarios(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (id, x) in a {
        if let Some(y) = b.get(id) {
            xs.push(*x);
            ys.push(*y);
        }
    }
    (xs, ys)
}

fn shift_for(ctx: &Ctx, p: &ModelProfile, lang: Language, country: &str) -> Option<StatsSummary> {
    let a = scenario_favourability(&ctx.main(p, (lang, lang), true), country);
    let b = scenario_favourability(&ctx.main(p, (Language::En, Language::En), true), country);
    let (xs, ys) = paired_scenarios(&a, &b);
    if xs.is_empty() {
        return None;
    }
    match paired_t(&xs, &ys) {
        Ok(s) => Some(s),
        // constant differences: report the mean without a test
        Err(_) => {
            let d: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x - y).collect();
            let m = mean(&d)?;
            one_sample_t(&d).ok().or(Some(StatsSummary {
                mean: m,
                ci_half_width: Some(0.0),
                statistic: if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY },
                p_value: if m == 0.0 { 1.0 } else { 0.0 },
                n: d.len(),
                n_clusters: None,
                df: Some(d.len().saturating_sub(1) as f64),
                test_kind: geoprobe_core::stats::TestKind::PairedT,
            }))
        }
    }
}

fn language_shifts(ctx: &Ctx) -> (Vec<LanguageShift>, Vec<LanguageShiftTests>) {
    let same: BTreeSet<Language> = ctx
        .conditions
        .iter()
        .filter(|(s, q)| s == q)
        .map(|(s, _)| *s)
        .collect();
    let mut shifts = Vec::new();
    let mut tests = Vec::new();
    if !same.contains(&Language::En) {
        return (shifts, tests);
    }
    for &lang in same.iter().filter(|l| **l != Language::En) {
        for p in &ctx.meta.profiles {
            let mut countries = vec![ctx.target.to_string()];
            if let Some(h) = home_country(lang) {
                if h != ctx.target && ctx.bank.country(h).is_ok() {
                    countries.push(h.to_string());
                }
            }
            for c in countries {
                let absolute = country_favourability(&ctx.main(p, (lang, lang), true), &c)
                    .ok()
                    .map(|s| s.favourability);
                shifts.push(LanguageShift {
                    model_id: p.id.clone(),
                    language: lang,
                    reference: Language::En,
                    country: c.clone(),
                    shift: shift_for(ctx, p, lang, &c),
                    absolute,
                });
            }
        }
        let target_shift = |id: &str| {
            shifts
                .iter()
                .find(|s| s.model_id == id && s.language == lang && s.country == ctx.target)
                .and_then(|s| s.shift.as_ref().map(|t| t.mean))
        };
        let post: Vec<f64> = ctx
            .meta
            .profiles
            .iter()
            .filter(|p| p.is_post_trained)
            .filter_map(|p| target_shift(&p.id))
            .collect();
        let toward = post.iter().filter(|d| **d > 0.0).count();
        let (mut pb, mut bb) = (Vec::new(), Vec::new());
        for (b, p) in families(&ctx.meta.profiles) {
            if let (Some(x), Some(y)) = (target_shift(&p.id), target_shift(&b.id)) {
                pb.push(x);
                bb.push(y);
            }
        }
        tests.push(LanguageShiftTests {
            language: lang,
            n_post_trained: post.len(),
            n_toward_target: toward,
            binomial: exact_binomial_two_sided(toward as u64, post.len() as u64, 0.5).ok(),
            paired_vs_base: paired_t(&pb, &bb).ok(),
            n_families: pb.len(),
        });
    }
    (shifts, tests)
}

fn factorial(ctx: &Ctx) -> Vec<FactorialTable> {
    let langs = [Language::En, Language::Zh];
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        let mut cells = Vec::new();
        let mut crossed = false;
        for s in langs {
            for q in langs {
                let scores = ctx.main(p, (s, q), true);
                let fav = country_favourability(&scores, ctx.target).ok().map(|c| c.favourability);
                crossed |= s != q && fav.is_some();
                cells.push(FactorialCell {
                    scenario_language: s,
                    question_language: q,
                    favourability: fav,
                });
            }
        }
        if crossed {
            out.push(FactorialTable {
                model_id: p.id.clone(),
                cells,
            });
        }
    }
    out
}

fn opponents(ctx: &Ctx) -> Vec<OpponentRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        for &cond in &ctx.conditions {
            let scores = ctx.main(p, cond, true);
            let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for s in &scores {
                if let (Some(v), Some(o)) = (s.favourability_for(ctx.target), s.cell.pair.opponent_of(ctx.target)) {
                    by.entry(o.to_string()).or_default().push(v);
                }
            }
            for (opponent, vs) in by {
                let bloc = ctx.bank.country(&opponent).map(|c| c.bloc).unwrap_or(Bloc::Fictional);
                out.push(OpponentRow {
                    model_id: p.id.clone(),
                    scenario_language: cond.0,
                    question_language: cond.1,
                    opponent,
                    opponent_bloc: bloc,
                    favourability: mean(&vs).unwrap_or(0.0),
                });
            }
        }
    }
    out
}

fn hot_cold(ctx: &Ctx) -> Vec<HotColdRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        for &cond in &ctx.conditions {
            let per = scenario_favourability(&ctx.main(p, cond, true), ctx.target);
            if per.is_empty() {
                continue;
            }
            let pick = |heat: Heat| {
                let vs: Vec<f64> = per
                    .iter()
                    .filter(|(id, _)| ctx.bank.scenario(id).is_ok_and(|s| s.heat == heat))
                    .map(|(_, v)| *v)
                    .collect();
                mean(&vs)
            };
            let (hot, cold) = (pick(Heat::Hot), pick(Heat::Cold));
            out.push(HotColdRow {
                model_id: p.id.clone(),
                scenario_language: cond.0,
                question_language: cond.1,
                hot,
                cold,
                hot_minus_cold: hot.zip(cold).map(|(h, c)| h - c),
            });
        }
    }
    out
}

fn scenario_types(ctx: &Ctx) -> Vec<TypeRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        for &cond in &ctx.conditions {
            let per = scenario_favourability(&ctx.main(p, cond, true), ctx.target);
            let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (id, v) in per {
                by.entry(ctx.scenario_type(&id)).or_default().push(v);
            }
            for (ty, vs) in by {
                out.push(TypeRow {
                    model_id: p.id.clone(),
                    scenario_language: cond.0,
                    question_language: cond.1,
                    scenario_type: ty,
                    favourability: mean(&vs).unwrap_or(0.0),
                    n_scenarios: vs.len(),
                });
            }
        }
    }
    out
}

fn fictional(ctx: &Ctx) -> Vec<FictionalRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        for &cond in &ctx.conditions {
            let scores = ctx.select(&p.id, cond, main_flags(p), PhrasingId::Default, true, true);
            if scores.is_empty() {
                continue;
            }
            for c in ctx.bank.fictional_countries() {
                if let Ok(cs) = country_favourability(&scores, &c.code) {
                    out.push(FictionalRow {
                        model_id: p.id.clone(),
                        scenario_language: cond.0,
                        question_language: cond.1,
                        country: c.code.clone(),
                        phonetic_identity: c.phonetic_identity,
                        favourability: cs.favourability,
                    });
                }
            }
        }
    }
    out
}

fn ablations(ctx: &Ctx) -> Vec<AblationDelta> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        let main = main_flags(p);
        let mut variants: Vec<(String, RecordFlags, PhrasingId)> = vec![(
            if p.hedge_enabled { "hedge_off" } else { "hedge_on" }.to_string(),
            RecordFlags {
                hedged: !main.hedged,
                ..main
            },
            PhrasingId::Default,
        )];
        for ph in ctx.bank.paired_phrasings() {
            if ph != PhrasingId::Default {
                let name = serde_json::to_value(ph).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                variants.push((format!("phrasing_{name}"), main, ph));
            }
        }
        variants.push((
            "neutralization".into(),
            RecordFlags {
                neutralized: true,
                ..main
            },
            PhrasingId::Default,
        ));
        for &cond in &ctx.conditions {
            let base_scores = ctx.main(p, cond, true);
            let Ok(base) = country_favourability(&base_scores, ctx.target) else { continue };
            for (name, flags, ph) in &variants {
                let vs = ctx.select(&p.id, cond, *flags, *ph, false, true);
                if let Ok(v) = country_favourability(&vs, ctx.target) {
                    out.push(AblationDelta {
                        model_id: p.id.clone(),
                        scenario_language: cond.0,
                        question_language: cond.1,
                        ablation: name.clone(),
                        baseline: base.favourability,
                        variant: v.favourability,
                        delta: v.favourability - base.favourability,
                        variant_compliance: mean_compliance(&vs).unwrap_or(0.0),
                    });
                }
            }
        }
    }
    out
}

fn prefill(ctx: &Ctx, records: &[MeasurementRecord]) -> Vec<PrefillRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        let Some(token) = &p.prefill_token else { continue };
        let corrected = main_flags(p);
        let naive = RecordFlags {
            prefilled: false,
            ..corrected
        };
        for &cond in &ctx.conditions {
            let comp = |flags: RecordFlags| {
                mean_compliance_records(records.iter().filter(|r| {
                    r.model_id == p.id
                        && (r.scenario_language, r.question_language) == cond
                        && r.flags == flags
                        && r.phrasing_id == PhrasingId::Default
                        && ctx.real(&r.pair)
                }))
            };
            let naive_c = comp(naive);
            if naive_c.is_none() {
                continue;
            }
            let fav = |flags| {
                country_favourability(&ctx.select(&p.id, cond, flags, PhrasingId::Default, false, true), ctx.target)
                    .ok()
                    .map(|c| c.favourability)
            };
            out.push(PrefillRow {
                model_id: p.id.clone(),
                scenario_language: cond.0,
                question_language: cond.1,
                prefill_token: token.clone(),
                naive_compliance: naive_c,
                corrected_compliance: comp(corrected),
                naive_favourability: fav(naive),
                corrected_favourability: fav(corrected),
            });
        }
    }
    out
}

fn exclusion(ctx: &Ctx) -> Vec<ExclusionRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        let mut scores = Vec::new();
        for &cond in &ctx.conditions {
            scores.extend(ctx.main(p, cond, false));
        }
        let (ids, js, us) = polarity_means_for(&scores, &p.id, ctx.target);
        out.push(ExclusionRow {
            model_id: p.id.clone(),
            justified_unjustified_correlation: exclusion_diagnostic(&p.id, &js, &us)
                .ok()
                .map(|d| d.justified_unjustified_correlation),
            n_scenarios: ids.len(),
        });
    }
    out
}

fn freegen(ctx: &Ctx, rows: &[ModelRow], generations: &[GenerationRecord]) -> Vec<FreegenRow> {
    let mut out = Vec::new();
    for p in &ctx.meta.profiles {
        if !generations.iter().any(|g| g.model_id == p.id) {
            continue;
        }
        let cond = generations
            .iter()
            .find(|g| g.model_id == p.id)
            .map(|g| (g.scenario_language, g.question_language))
            .unwrap_or(ctx.conditions[0]);
        let own = summarize(&p.id, ControlKind::OwnReasoning, generations);
        let filler = summarize(&p.id, ControlKind::NeutralFiller, generations);
        let forced = row(rows, &p.id, cond).and_then(|r| r.favourability.as_ref().map(|f| f.value));
        let sign_agreement = own
            .commit_logodds_mean
            .zip(forced)
            .map(|(c, f)| c.signum() == f.signum() && c != 0.0 && f != 0.0);
        out.push(FreegenRow {
            model_id: p.id.clone(),
            label: p.label().to_string(),
            own_reasoning: own,
            neutral_filler: (filler.n > 0).then_some(filler),
            forced,
            sign_agreement,
            agreement_expected: forced.is_some_and(|f| f.abs() >= SIGN_AGREEMENT_BAND),
        });
    }
    out
}
