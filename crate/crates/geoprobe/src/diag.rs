//! First-token diagnostic: what a model puts mass on after the answer cue.

use geoprobe_core::bank::{Bank, CountryPair, Language, Ordering, Polarity};
use geoprobe_core::prompt::{assemble, ModelProfile, ProbeSpec, PromptParts};
use geoprobe_core::provider::DistributionProvider;
use geoprobe_core::scoring::{first_token_topk, score_query};
use serde::{Deserialize, Serialize};

use crate::runner::RunError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstTokenRow {
    pub model_id: String,
    pub scenario_id: String,
    pub prefilled: bool,
    pub compliance: f64,
    pub top: Vec<(String, f64)>,
}

/// Top-`k` next tokens for the justified, forward, default-phrasing prompt of
/// one scenario and pair, with and without the profile's prefill.
pub fn first_token(
    bank: &Bank,
    profile: &ModelProfile,
    provider: &dyn DistributionProvider,
    scenario_id: &str,
    pair: (&str, &str),
    language: Language,
    k: usize,
) -> Result<Vec<FirstTokenRow>, RunError> {
    let base = ProbeSpec::new(language, Polarity::Justified, Ordering::Forward);
    let parts = PromptParts::build(bank, scenario_id, &CountryPair::new(pair.0, pair.1), &base)
        .map_err(|e| RunError::Prompt(e.into()))?;
    let mut specs = vec![base];
    if profile.prefill_token.is_some() {
        let mut s = specs[0].clone();
        s.prefill = geoprobe_core::prompt::PrefillOverride::None;
        specs.insert(0, s);
    }
    let mut rows = Vec::new();
    for spec in specs {
        let prompt = assemble(profile, &parts, &spec)?;
        let dist = provider
            .next_token_distribution(&prompt.text, &requested(profile))
            .map_err(|source| RunError::Provider {
                model: profile.id.clone(),
                source,
            })?;
        rows.push(FirstTokenRow {
            model_id: profile.id.clone(),
            scenario_id: scenario_id.to_string(),
            prefilled: prompt.prefilled,
            compliance: score_query(&dist, profile).compliance,
            top: first_token_topk(&dist, k),
        });
    }
    Ok(rows)
}

fn requested(profile: &ModelProfile) -> Vec<String> {
    profile
        .answer_variants_a
        .iter()
        .chain(&profile.answer_variants_b)
        .cloned()
        .collect()
}
