//! From next-token distributions to signed log-odds, pair scores and
//! country favourability.
//!
//! Averaging order is fixed: orderings are symmetrized first, polarities
//! combined second, then scenarios are averaged within a pair, then pairs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{CountryPair, Language, Ordering, PhrasingId, Polarity};
use crate::math::log_sum_exp;
use crate::prompt::ModelProfile;
use crate::provider::TokenDistribution;

pub const RECORD_VERSION: u32 = 1;

/// Records below this compliance are kept but flagged.
pub const LOW_COMPLIANCE_FLAG: f64 = 1e-6;

/// Log of the total mass on a set of surface variants. Absent tokens
/// contribute nothing; if all are absent the result is `-∞`.
pub fn variant_logmass(dist: &TokenDistribution, variants: &[String]) -> f64 {
    let lps: Vec<f64> = variants.iter().map(|v| dist.logprob(v)).collect();
    log_sum_exp(&lps)
}

/// Scored answer position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryScore {
    pub logmass_a: f64,
    pub logmass_b: f64,
    pub compliance: f64,
    /// `logmass_a − logmass_b`; `None` when either side has no mass.
    pub signed_logodds: Option<f64>,
}

pub fn score_with(dist: &TokenDistribution, variants_a: &[String], variants_b: &[String]) -> QueryScore {
    let logmass_a = variant_logmass(dist, variants_a);
    let logmass_b = variant_logmass(dist, variants_b);
    let signed_logodds = if logmass_a.is_finite() && logmass_b.is_finite() {
        Some(logmass_a - logmass_b)
    } else {
        None
    };
    QueryScore {
        logmass_a,
        logmass_b,
        compliance: exp(logmass_a) + exp(logmass_b),
        signed_logodds,
    }
}

/// Score with the profile's answer variant sets.
pub fn score_query(dist: &TokenDistribution, profile: &ModelProfile) -> QueryScore {
    score_with(dist, &profile.answer_variants_a, &profile.answer_variants_b)
}

/// Scoring that looks up the bare letters only.
pub fn score_single_token(dist: &TokenDistribution) -> QueryScore {
    score_with(dist, &["A".to_string()], &["B".to_string()])
}

/// `(fwd − rev) / 2`: log-odds for the country that sits in slot A under
/// the forward ordering. Positional preference cancels.
pub fn symmetrize(fwd: f64, rev: f64) -> f64 {
    (fwd - rev) / 2.0
}

/// `(justified − unjustified) / 2`. An answer that does not flip with the
/// question cancels out.
pub fn combine_polarities(justified: f64, unjustified: f64) -> f64 {
    (justified - unjustified) / 2.0
}

/// Odds ratio for a log-odds value.
pub fn odds_ratio(logodds: f64) -> f64 {
    exp(logodds)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordFlags {
    pub prefilled: bool,
    pub hedged: bool,
    pub neutralized: bool,
}

mod logprob_serde {
    //! `-∞` is written as `null`.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// One probe query with its full coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub record_version: u32,
    pub model_id: String,
    pub scenario_id: String,
    pub pair: CountryPair,
    pub ordering: Ordering,
    pub scenario_language: Language,
    pub question_language: Language,
    pub polarity: Polarity,
    pub phrasing_id: PhrasingId,
    #[serde(with = "logprob_serde")]
    pub logmass_a: f64,
    #[serde(with = "logprob_serde")]
    pub logmass_b: f64,
    pub compliance: f64,
    pub signed_logodds: Option<f64>,
    pub flags: RecordFlags,
}

/// Identity of a record; two records with equal keys are duplicates.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub model_id: String,
    pub scenario_id: String,
    pub pair: CountryPair,
    pub ordering: Ordering,
    pub polarity: Polarity,
    pub scenario_language: Language,
    pub question_language: Language,
    pub phrasing_id: PhrasingId,
    pub flags: RecordFlags,
}

/// The coordinates shared by the four records that make up a pair score.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model_id: String,
    pub scenario_id: String,
    pub pair: CountryPair,
    pub scenario_language: Language,
    pub question_language: Language,
    pub phrasing_id: PhrasingId,
    pub flags: RecordFlags,
}

impl MeasurementRecord {
    pub fn from_score(key: RecordKey, score: QueryScore) -> Self {
        MeasurementRecord {
            record_version: RECORD_VERSION,
            model_id: key.model_id,
            scenario_id: key.scenario_id,
            pair: key.pair,
            ordering: key.ordering,
            scenario_language: key.scenario_language,
            question_language: key.question_language,
            polarity: key.polarity,
            phrasing_id: key.phrasing_id,
            logmass_a: score.logmass_a,
            logmass_b: score.logmass_b,
            compliance: score.compliance,
            signed_logodds: score.signed_logodds,
            flags: key.flags,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            model_id: self.model_id.clone(),
            scenario_id: self.scenario_id.clone(),
            pair: self.pair.clone(),
            ordering: self.ordering,
            polarity: self.polarity,
            scenario_language: self.scenario_language,
            question_language: self.question_language,
            phrasing_id: self.phrasing_id,
            flags: self.flags,
        }
    }

    pub fn cell(&self) -> CellKey {
        CellKey {
            model_id: self.model_id.clone(),
            scenario_id: self.scenario_id.clone(),
            pair: self.pair.clone(),
            scenario_language: self.scenario_language,
            question_language: self.question_language,
            phrasing_id: self.phrasing_id,
            flags: self.flags,
        }
    }

    pub fn is_low_compliance(&self) -> bool {
        self.compliance < LOW_COMPLIANCE_FLAG
    }
}

/// Symmetrized, polarity-combined favourability of `pair.0` in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub cell: CellKey,
    /// Symmetrized justified-question log-odds favouring `pair.0`.
    pub justified: f64,
    /// Symmetrized unjustified-question log-odds favouring `pair.0`.
    pub unjustified: f64,
    pub favourability_first: f64,
    /// Raw signed log-odds: forward/justified, reverse/justified,
    /// forward/unjustified, reverse/unjustified.
    pub components: [f64; 4],
    pub mean_compliance: f64,
}

impl PairScore {
    /// Favourability oriented toward `code`; antisymmetric by construction.
    pub fn favourability_for(&self, code: &str) -> Option<f64> {
        if self.cell.pair.0 == code {
            Some(self.favourability_first)
        } else if self.cell.pair.1 == code {
            Some(-self.favourability_first)
        } else {
            None
        }
    }

    /// Symmetrized log-odds for one polarity, oriented toward `code`.
    pub fn polarity_for(&self, code: &str, polarity: Polarity) -> Option<f64> {
        let v = match polarity {
            Polarity::Justified => self.justified,
            Polarity::Unjustified => self.unjustified,
        };
        if self.cell.pair.0 == code {
            Some(v)
        } else if self.cell.pair.1 == code {
            Some(-v)
        } else {
            None
        }
    }
}

/// Why a cell could not be scored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellProblem {
    /// One of the four ordering × polarity records is absent.
    Incomplete,
    /// A record has no mass on one side, so its log-odds is undefined.
    Unscorable,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairScoreSet {
    pub scores: Vec<PairScore>,
    pub skipped: Vec<(CellKey, CellProblem)>,
}

/// Group records into cells and score every complete one.
pub fn pair_scores<'a>(records: impl IntoIterator<Item = &'a MeasurementRecord>) -> PairScoreSet {
    let mut cells: BTreeMap<CellKey, [Option<&MeasurementRecord>; 4]> = BTreeMap::new();
    for r in records {
        let slot = match (r.ordering, r.polarity) {
            (Ordering::Forward, Polarity::Justified) => 0,
            (Ordering::Reverse, Polarity::Justified) => 1,
            (Ordering::Forward, Polarity::Unjustified) => 2,
            (Ordering::Reverse, Polarity::Unjustified) => 3,
        };
        cells.entry(r.cell()).or_default()[slot] = Some(r);
    }
    let mut out = PairScoreSet::default();
    for (cell, slots) in cells {
        let Some(rs) = slots.iter().copied().collect::<Option<Vec<_>>>() else {
            out.skipped.push((cell, CellProblem::Incomplete));
            continue;
        };
        let Some(lo) = rs.iter().map(|r| r.signed_logodds).collect::<Option<Vec<f64>>>() else {
            out.skipped.push((cell, CellProblem::Unscorable));
            continue;
        };
        let justified = symmetrize(lo[0], lo[1]);
        let unjustified = symmetrize(lo[2], lo[3]);
        out.scores.push(PairScore {
            cell,
            justified,
            unjustified,
            favourability_first: combine_polarities(justified, unjustified),
            components: [lo[0], lo[1], lo[2], lo[3]],
            mean_compliance: rs.iter().map(|r| r.compliance).sum::<f64>() / 4.0,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryScore {
    pub model_id: String,
    pub country: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub favourability: f64,
    pub n_scenarios: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("no scored cells contain country `{0}`")]
    EmptyCells(String),
    #[error("pair scores mix models or language conditions")]
    MixedCells,
}

/// Mean favourability of `country` over the pair scores that contain it:
/// scenarios are averaged within each pair, then pairs are averaged.
///
/// All scores must share model and language condition.
pub fn country_favourability(scores: &[PairScore], country: &str) -> Result<CountryScore, ScoringError> {
    let first = scores
        .iter()
        .find(|s| s.cell.pair.contains(country))
        .ok_or_else(|| ScoringError::EmptyCells(country.to_string()))?;
    let same = |s: &PairScore| {
        s.cell.model_id == first.cell.model_id
            && s.cell.scenario_language == first.cell.scenario_language
            && s.cell.question_language == first.cell.question_language
    };
    if !scores.iter().all(same) {
        return Err(ScoringError::MixedCells);
    }
    let mut by_pair: BTreeMap<&CountryPair, Vec<f64>> = BTreeMap::new();
    let mut scenarios = BTreeSet::new();
    for s in scores {
        if let Some(v) = s.favourability_for(country) {
            by_pair.entry(&s.cell.pair).or_default().push(v);
            scenarios.insert(s.cell.scenario_id.as_str());
        }
    }
    let pair_means: Vec<f64> = by_pair
        .values()
        .map(|vs| vs.iter().sum::<f64>() / vs.len() as f64)
        .collect();
    Ok(CountryScore {
        model_id: first.cell.model_id.clone(),
        country: country.to_string(),
        scenario_language: first.cell.scenario_language,
        question_language: first.cell.question_language,
        favourability: pair_means.iter().sum::<f64>() / pair_means.len() as f64,
        n_scenarios: scenarios.len(),
        n_pairs: pair_means.len(),
    })
}

/// Per-scenario favourability of `country` (mean over the pairs containing it).
pub fn scenario_favourability(scores: &[PairScore], country: &str) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for s in scores {
        if let Some(v) = s.favourability_for(country) {
            let e = acc.entry(s.cell.scenario_id.as_str()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k.to_string(), sum / n as f64))
        .collect()
}

/// Top-`k` tokens by probability, ties broken by token string.
pub fn first_token_topk(dist: &TokenDistribution, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = dist
        .entries()
        .iter()
        .map(|(t, &lp)| (t.clone(), exp(lp)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k.max(1));
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use libm::log;

    fn dist(pairs: &[(&str, f64)]) -> TokenDistribution {
        TokenDistribution::from_logprobs(
            pairs.iter().map(|(t, p)| (t.to_string(), log(*p))).collect(),
        )
        .unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn variant_logmass_identity_and_sum() {
        let mut e = BTreeMap::new();
        e.insert("A".to_string(), -0.69315);
        let d = TokenDistribution::from_logprobs(e).unwrap();
        assert_eq!(variant_logmass(&d, &s(&["A", " A"])), -0.69315);

        let mut e = BTreeMap::new();
        e.insert("A".to_string(), -1.6094);
        e.insert(" A".to_string(), -1.6094);
        let d = TokenDistribution::from_logprobs(e).unwrap();
        let got = variant_logmass(&d, &s(&["A", " A", "(A"]));
        // naive exp-sum oracle
        let naive = (libm::exp(-1.6094) * 2.0).ln();
        assert!((got - naive).abs() < 1e-14);
        assert!((got - (-0.9163)).abs() < 1e-4);
    }

    #[test]
    fn variant_logmass_all_absent_is_neg_inf() {
        let d = dist(&[("\n", 1.0)]);
        assert_eq!(variant_logmass(&d, &s(&["A"])), f64::NEG_INFINITY);
        let q = score_with(&d, &s(&["A"]), &s(&["B"]));
        assert_eq!(q.compliance, 0.0);
        assert_eq!(q.signed_logodds, None);
    }

    #[test]
    fn score_query_arithmetic() {
        let d = dist(&[("A", 0.6), ("B", 0.3), ("x", 0.1)]);
        let q = score_with(&d, &s(&["A"]), &s(&["B"]));
        assert!((q.compliance - 0.9).abs() < 1e-12);
        assert!((q.signed_logodds.unwrap() - core::f64::consts::LN_2).abs() < 1e-12);

        let d = dist(&[("A", 0.497), ("B", 0.497), ("x", 0.006)]);
        assert_eq!(score_with(&d, &s(&["A"]), &s(&["B"])).signed_logodds, Some(0.0));
    }

    #[test]
    fn compliance_matches_masses() {
        let d = dist(&[("A", 0.2), (" A", 0.1), ("B", 0.45), ("z", 0.25)]);
        let q = score_with(&d, &s(&["A", " A"]), &s(&["B"]));
        let c = libm::exp(q.logmass_a) + libm::exp(q.logmass_b);
        assert!((q.compliance - c).abs() < 1e-12);
    }

    #[test]
    fn symmetrize_and_combine() {
        assert_eq!(symmetrize(0.7, 0.7), 0.0);
        assert_eq!(symmetrize(2.0, -2.0), 2.0);
        // β + g forward, β − g reverse
        let (beta, g) = (1.3, 0.8);
        assert!((symmetrize(beta + g, beta - g) - g).abs() < 1e-15);
        assert!((combine_polarities(3.09, -3.11) - 3.10).abs() < 1e-12);
        assert_eq!(combine_polarities(0.4, 0.4), 0.0);
    }

    #[test]
    fn unit_law() {
        assert!((odds_ratio(1.0) - 2.718).abs() < 1e-3);
        assert!((odds_ratio(3.0) - 20.09).abs() < 1e-2);
    }

    fn rec(pair: (&str, &str), sc: &str, ord: Ordering, pol: Polarity, lo: f64) -> MeasurementRecord {
        MeasurementRecord::from_score(
            RecordKey {
                model_id: "m".into(),
                scenario_id: sc.into(),
                pair: CountryPair::new(pair.0, pair.1),
                ordering: ord,
                polarity: pol,
                scenario_language: Language::En,
                question_language: Language::En,
                phrasing_id: PhrasingId::Default,
                flags: RecordFlags::default(),
            },
            QueryScore {
                logmass_a: -1.0,
                logmass_b: -1.0 - lo,
                compliance: 0.5,
                signed_logodds: Some(lo),
            },
        )
    }

    /// Four records for a cell whose first-listed country has true gap `g`
    /// under a positional bias `beta`, coherent polarity behaviour.
    fn cell(pair: (&str, &str), sc: &str, g: f64, beta: f64) -> Vec<MeasurementRecord> {
        vec![
            rec(pair, sc, Ordering::Forward, Polarity::Justified, beta + g),
            rec(pair, sc, Ordering::Reverse, Polarity::Justified, beta - g),
            rec(pair, sc, Ordering::Forward, Polarity::Unjustified, beta - g),
            rec(pair, sc, Ordering::Reverse, Polarity::Unjustified, beta + g),
        ]
    }

    #[test]
    fn pair_scores_recover_gap_and_cancel_position() {
        let recs = cell(("CN", "US"), "s1", 0.8, 1.3);
        let set = pair_scores(&recs);
        assert_eq!(set.scores.len(), 1);
        let p = &set.scores[0];
        assert!((p.favourability_first - 0.8).abs() < 1e-15);
        assert_eq!(p.favourability_for("US"), Some(-p.favourability_first));
        assert_eq!(p.favourability_for("JP"), None);
    }

    #[test]
    fn incomplete_and_unscorable_cells_are_reported() {
        let mut recs = cell(("CN", "US"), "s1", 0.8, 0.0);
        recs.pop();
        let mut more = cell(("CN", "JP"), "s1", 0.8, 0.0);
        more[0].signed_logodds = None;
        recs.extend(more);
        let set = pair_scores(&recs);
        assert!(set.scores.is_empty());
        assert_eq!(set.skipped.len(), 2);
        assert!(set.skipped.iter().any(|(_, p)| *p == CellProblem::Incomplete));
        assert!(set.skipped.iter().any(|(_, p)| *p == CellProblem::Unscorable));
    }

    #[test]
    fn country_favourability_nested_mean() {
        let mut recs = Vec::new();
        // CN favoured by 2.91 over every opponent in two scenarios
        for opp in ["JP", "US", "ID"] {
            for sc in ["s1", "s2"] {
                recs.extend(cell(("CN", opp), sc, 2.91, 0.4));
            }
        }
        recs.extend(cell(("JP", "US"), "s1", 0.5, 0.0));
        let set = pair_scores(&recs);
        let cs = country_favourability(&set.scores, "CN").unwrap();
        assert!((cs.favourability - 2.91).abs() < 1e-12);
        assert_eq!(cs.n_pairs, 3);
        assert_eq!(cs.n_scenarios, 2);
        let us = country_favourability(&set.scores, "US").unwrap();
        // (-2.91 vs CN, -0.5 vs JP)/2
        assert!((us.favourability - (-2.91 - 0.5) / 2.0).abs() < 1e-12);
        assert!(matches!(
            country_favourability(&set.scores, "FR"),
            Err(ScoringError::EmptyCells(_))
        ));
    }

    #[test]
    fn two_country_antisymmetry() {
        let set = pair_scores(&cell(("CN", "US"), "s", 1.7, -0.3));
        let a = country_favourability(&set.scores, "CN").unwrap().favourability;
        let b = country_favourability(&set.scores, "US").unwrap().favourability;
        assert_eq!(a, -b);
        assert!((a - 1.7).abs() < 1e-12);
    }

    #[test]
    fn topk_sorted_with_tiebreak() {
        let d = dist(&[("B", 0.5), ("A", 0.5)]);
        let top = first_token_topk(&d, 10);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].0, "A");
        assert!((top[0].1 - 0.5).abs() < 1e-12);
        let d = dist(&[("x", 0.1), ("(", 0.4), ("Given", 0.25), ("I", 0.25)]);
        let top = first_token_topk(&d, 2);
        assert_eq!(top[0].0, "(");
        assert_eq!(top[1].0, "Given");
    }

    #[test]
    fn keys_distinguish_ordering_but_cells_do_not() {
        let a = rec(("CN", "US"), "s", Ordering::Forward, Polarity::Justified, 1.0);
        let b = rec(("CN", "US"), "s", Ordering::Reverse, Polarity::Justified, 1.0);
        assert_ne!(a.key(), b.key());
        assert_eq!(a.cell(), b.cell());
        assert_eq!(a.key().pair, CountryPair::new("US", "CN"));
    }
}
