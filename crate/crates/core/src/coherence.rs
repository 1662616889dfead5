//! Dual-polarity coherence filter and the justified/unjustified
//! correlation diagnostic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Language, Polarity};
use crate::scoring::PairScore;
use crate::stats::{pearson, StatsError};

pub const DEFAULT_THRESHOLD: f64 = 0.70;
pub const SENSITIVITY_THRESHOLDS: [f64; 3] = [0.50, 0.70, 0.90];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoherenceError {
    #[error("scenario `{scenario}`: cell {model}/{language} lacks the {polarity:?} mean")]
    MissingPolarity {
        scenario: String,
        model: String,
        language: String,
        polarity: Polarity,
    },
    #[error("scenario `{0}` has no cells")]
    NoCells(String),
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Polarity means of one scenario in one model × language cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub model_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub justified_mean: Option<f64>,
    pub unjustified_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub scenario_id: String,
    pub flip_fraction: f64,
    pub n_cells: usize,
    /// `(threshold, flip_fraction ≥ threshold)`.
    pub included_at: Vec<(f64, bool)>,
}

impl CoherenceReport {
    pub fn included(&self, threshold: f64) -> bool {
        self.flip_fraction >= threshold
    }
}

fn lang_label(c: &CellMeans) -> String {
    if c.scenario_language == c.question_language {
        c.scenario_language.to_string()
    } else {
        alloc::format!("{}/{}", c.scenario_language, c.question_language)
    }
}

/// Fraction of cells whose justified and unjustified means differ in sign.
/// A mean of exactly zero never counts as a flip.
pub fn flip_fraction(
    scenario_id: &str,
    cells: &[CellMeans],
    thresholds: &[f64],
) -> Result<CoherenceReport, CoherenceError> {
    if cells.is_empty() {
        return Err(CoherenceError::NoCells(scenario_id.to_string()));
    }
    let mut flips = 0usize;
    for c in cells {
        let missing = |polarity| CoherenceError::MissingPolarity {
            scenario: scenario_id.to_string(),
            model: c.model_id.clone(),
            language: lang_label(c),
            polarity,
        };
        let j = c.justified_mean.ok_or_else(|| missing(Polarity::Justified))?;
        let u = c.unjustified_mean.ok_or_else(|| missing(Polarity::Unjustified))?;
        if (j > 0.0 && u < 0.0) || (j < 0.0 && u > 0.0) {
            flips += 1;
        }
    }
    let f = flips as f64 / cells.len() as f64;
    Ok(CoherenceReport {
        scenario_id: scenario_id.to_string(),
        flip_fraction: f,
        n_cells: cells.len(),
        included_at: thresholds.iter().map(|&t| (t, f >= t)).collect(),
    })
}

/// Per-scenario cell means from pair scores: each polarity's symmetrized
/// log-odds oriented toward `target`, averaged over the pairs containing it.
pub fn cell_means(scores: &[PairScore], target: &str) -> BTreeMap<String, Vec<CellMeans>> {
    type Key = (String, String, Language, Language);
    let mut acc: BTreeMap<Key, (f64, f64, usize)> = BTreeMap::new();
    for s in scores {
        let (Some(j), Some(u)) = (
            s.polarity_for(target, Polarity::Justified),
            s.polarity_for(target, Polarity::Unjustified),
        ) else {
            continue;
        };
        let k = (
            s.cell.scenario_id.clone(),
            s.cell.model_id.clone(),
            s.cell.scenario_language,
            s.cell.question_language,
        );
        let e = acc.entry(k).or_insert((0.0, 0.0, 0));
        e.0 += j;
        e.1 += u;
        e.2 += 1;
    }
    let mut out: BTreeMap<String, Vec<CellMeans>> = BTreeMap::new();
    for ((scenario, model, sl, ql), (j, u, n)) in acc {
        out.entry(scenario).or_default().push(CellMeans {
            model_id: model,
            scenario_language: sl,
            question_language: ql,
            justified_mean: Some(j / n as f64),
            unjustified_mean: Some(u / n as f64),
        });
    }
    out
}

/// Scenarios whose flip fraction reaches `threshold`. Scenarios in
/// `scenario_ids` with no report are excluded.
pub fn filter<'a>(
    scenario_ids: impl IntoIterator<Item = &'a str>,
    reports: &[CoherenceReport],
    threshold: f64,
) -> Result<BTreeSet<String>, CoherenceError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CoherenceError::BadThreshold(threshold));
    }
    let by_id: BTreeMap<&str, &CoherenceReport> =
        reports.iter().map(|r| (r.scenario_id.as_str(), r)).collect();
    Ok(scenario_ids
        .into_iter()
        .filter(|id| by_id.get(id).is_some_and(|r| r.included(threshold)))
        .map(|id| id.to_string())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionDiagnostic {
    pub model_id: String,
    pub justified_unjustified_correlation: f64,
    pub n_scenarios: usize,
}

/// Pearson correlation between per-scenario justified and unjustified means.
/// Coherent bias drives it negative, position artefacts positive.
pub fn exclusion_diagnostic(
    model_id: &str,
    justified: &[f64],
    unjustified: &[f64],
) -> Result<ExclusionDiagnostic, CoherenceError> {
    Ok(ExclusionDiagnostic {
        model_id: model_id.to_string(),
        justified_unjustified_correlation: pearson(justified, unjustified)?,
        n_scenarios: justified.len(),
    })
}

/// Per-scenario polarity means for one model, oriented toward `country`,
/// pooled over language conditions. Returned in scenario-id order.
pub fn polarity_means_for(scores: &[PairScore], model_id: &str, country: &str) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.cell.model_id == model_id) {
        if let (Some(j), Some(u)) = (
            s.polarity_for(country, Polarity::Justified),
            s.polarity_for(country, Polarity::Unjustified),
        ) {
            let e = acc.entry(s.cell.scenario_id.as_str()).or_insert((0.0, 0.0, 0));
            e.0 += j;
            e.1 += u;
            e.2 += 1;
        }
    }
    let mut ids = Vec::new();
    let mut js = Vec::new();
    let mut us = Vec::new();
    for (id, (j, u, n)) in acc {
        ids.push(id.to_string());
        js.push(j / n as f64);
        us.push(u / n as f64);
    }
    (ids, js, us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn cell(i: usize, j: f64, u: f64) -> CellMeans {
        CellMeans {
            model_id: format!("m{}", i / 3),
            scenario_language: Language::ALL[i % 3],
            question_language: Language::ALL[i % 3],
            justified_mean: Some(j),
            unjustified_mean: Some(u),
        }
    }

    #[test]
    fn counting_oracle() {
        let cells: Vec<CellMeans> = (0..42)
            .map(|i| if i < 30 { cell(i, 1.0, -0.5) } else { cell(i, 0.4, 0.4) })
            .collect();
        let r = flip_fraction("s", &cells, &SENSITIVITY_THRESHOLDS).unwrap();
        assert!((r.flip_fraction - 30.0 / 42.0).abs() < 1e-15);
        assert_eq!(r.n_cells, 42);
        assert_eq!(r.included_at, vec![(0.5, true), (0.7, true), (0.9, false)]);
    }

    #[test]
    fn zero_is_not_a_flip() {
        let cells = [cell(0, 0.0, -1.0), cell(1, 1.0, 0.0), cell(2, 1.0, -1.0)];
        let r = flip_fraction("s", &cells, &[]).unwrap();
        assert!((r.flip_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_polarity_is_an_error() {
        let mut c = cell(0, 1.0, -1.0);
        c.unjustified_mean = None;
        assert!(matches!(
            flip_fraction("s", &[c], &[]),
            Err(CoherenceError::MissingPolarity { .. })
        ));
        assert!(matches!(flip_fraction("s", &[], &[]), Err(CoherenceError::NoCells(_))));
    }

    #[test]
    fn filter_is_monotone() {
        let reports: Vec<CoherenceReport> = (0..=10)
            .map(|i| CoherenceReport {
                scenario_id: format!("s{i:02}"),
                flip_fraction: i as f64 / 10.0,
                n_cells: 10,
                included_at: vec![],
            })
            .collect();
        let ids: Vec<String> = reports.iter().map(|r| r.scenario_id.clone()).collect();
        let f = |t| filter(ids.iter().map(String::as_str), &reports, t).unwrap();
        let (a, b, c) = (f(0.5), f(0.7), f(0.9));
        assert_eq!((a.len(), b.len(), c.len()), (6, 4, 2));
        assert!(c.is_subset(&b) && b.is_subset(&a));
        assert!(filter(ids.iter().map(String::as_str), &reports, 0.0).is_err());
    }

    #[test]
    fn diagnostic_signs_and_errors() {
        let j = [1.0, 2.0, -0.5, 0.3];
        let u: Vec<f64> = j.iter().map(|x| -x + 0.01).collect();
        let d = exclusion_diagnostic("m", &j, &u).unwrap();
        assert!(d.justified_unjustified_correlation < -0.99);
        assert!(matches!(
            exclusion_diagnostic("m", &[1.0; 3], &[0.0, 1.0, 2.0]),
            Err(CoherenceError::Stats(StatsError::ZeroVariance))
        ));
    }
}
