//! Free-generation validation probe: reasoning prompts, letter-commit
//! parsing, commit-position log-odds and the neutral-filler control.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{CountryPair, Language, Ordering, PhrasingId, Polarity};
use crate::prompt::{hedge_in_effect, mcq_body, wrap, ModelProfile, Prompt, PromptError, PromptParts, ProbeSpec};
use crate::provider::GenerationResult;
use crate::scoring::variant_logmass;

pub const DEFAULT_GENERATIONS: usize = 60;
pub const DEFAULT_MAX_TOKENS: usize = 120;

/// Forced answer slot appended after a neutral filler.
pub const ANSWER_SLOT: &str = "\nFinal answer: (";

/// Country-free stand-in for the model's own reasoning.
pub const NEUTRAL_FILLER: &str =
    "Both accounts describe the same sequence of events, and each side gives a reason for what it did.";

const ANSWER_CUES: [&str; 3] = ["answer", "réponse", "答案"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FreegenError {
    #[error("commit index {index} outside a {len}-token generation")]
    MissingDistribution { index: usize, len: usize },
    #[error("no answer-variant mass at the commit position")]
    Unscorable,
    #[error("neutral filler is empty")]
    EmptyFiller,
    #[error("neutral filler mentions `{0}`")]
    FillerMentionsCountry(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Reasoning prompt: the forced-choice scaffold with the answer cue
/// replaced by the free-generation instruction. Never prefilled.
pub fn freegen_prompt(profile: &ModelProfile, parts: &PromptParts, spec: &ProbeSpec) -> Result<Prompt, PromptError> {
    profile.validate()?;
    if !profile.is_post_trained {
        return Err(PromptError::NotPostTrained(profile.id.clone()));
    }
    let hedged = hedge_in_effect(profile, spec.hedge);
    let mut content = mcq_body(parts, hedged);
    content.push_str("\n\n");
    content.push_str(&parts.freegen_instruction);
    let text = wrap(profile, spec.system_message.as_deref(), &content, None)?;
    Ok(Prompt {
        text,
        hedged,
        prefilled: false,
        neutralized: spec.system_message.as_deref() == Some(crate::prompt::NEUTRALIZATION_MESSAGE),
    })
}

/// Prompt for the neutral-filler control: the reasoning prompt with the
/// assistant turn already holding `filler` and the forced answer slot.
pub fn filler_prompt(freegen: &Prompt, filler: &str, names: &[&str]) -> Result<String, FreegenError> {
    if filler.trim().is_empty() {
        return Err(FreegenError::EmptyFiller);
    }
    if let Some(n) = names.iter().find(|n| !n.is_empty() && filler.contains(**n)) {
        return Err(FreegenError::FillerMentionsCountry(n.to_string()));
    }
    let mut text = freegen.text.clone();
    text.push_str(filler);
    text.push_str(ANSWER_SLOT);
    Ok(text)
}

fn letter_at(text: &str, i: usize) -> Option<Letter> {
    match text.as_bytes().get(i) {
        Some(b'A') => Some(Letter::A),
        Some(b'B') => Some(Letter::B),
        _ => None,
    }
}

/// Last parenthesized standalone letter: `(A)`, fullwidth `（A）`, or an
/// unclosed `(A` at the very end of the text.
fn last_parenthesized(text: &str) -> Option<(usize, Letter)> {
    let mut best = None;
    for (open, _) in text.match_indices(['(', '（']) {
        let open_len = if text[open..].starts_with('(') { 1 } else { '（'.len_utf8() };
        let li = open + open_len;
        let Some(letter) = letter_at(text, li) else { continue };
        let rest = &text[li + 1..];
        if rest.is_empty() || rest.starts_with(')') || rest.starts_with('）') {
            best = Some((li, letter));
        }
    }
    best
}

/// Last bare letter right after an answer cue such as "Answer: B" or
/// "the answer is A".
fn last_after_cue(text: &str) -> Option<(usize, Letter)> {
    let lower = text.to_lowercase();
    if lower.len() != text.len() {
        return None;
    }
    let mut best = None;
    for cue in ANSWER_CUES {
        for (at, _) in lower.match_indices(cue) {
            let mut i = at + cue.len();
            let bytes = text.as_bytes();
            loop {
                let rest = &text[i..];
                if let Some(c) = rest.chars().next().filter(|c| matches!(c, ' ' | ':' | '：' | '*' | '\n' | '\t')) {
                    i += c.len_utf8();
                } else if rest.starts_with("is ") {
                    i += 3;
                } else {
                    break;
                }
            }
            if let Some(letter) = letter_at(text, i) {
                let boundary = bytes.get(i + 1).is_none_or(|b| !b.is_ascii_alphanumeric());
                if boundary && best.is_none_or(|(b, _)| i > b) {
                    best = Some((i, letter));
                }
            }
        }
    }
    best
}

/// The committed letter and the index of the token that carries it.
/// The last occurrence in the text wins.
pub fn parse_letter_commit(gen: &GenerationResult) -> Option<(Letter, usize)> {
    let (offset, letter) = match (last_parenthesized(&gen.text), last_after_cue(&gen.text)) {
        (Some(p), Some(c)) => {
            if c.0 > p.0 {
                c
            } else {
                p
            }
        }
        (Some(p), None) => p,
        (None, Some(c)) => c,
        (None, None) => return None,
    };
    let offsets = gen.token_offsets();
    let index = offsets.iter().rposition(|&start| start <= offset)?;
    Some((letter, index))
}

/// Variant-summed `log P(A) − log P(B)` at the commit token, conditioned on
/// everything the model generated before it.
pub fn commit_logodds(gen: &GenerationResult, index: usize, profile: &ModelProfile) -> Result<f64, FreegenError> {
    let dist = gen.distributions.get(index).ok_or(FreegenError::MissingDistribution {
        index,
        len: gen.distributions.len(),
    })?;
    let a = variant_logmass(dist, &profile.answer_variants_a);
    let b = variant_logmass(dist, &profile.answer_variants_b);
    if a.is_finite() && b.is_finite() {
        Ok(a - b)
    } else {
        Err(FreegenError::Unscorable)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    OwnReasoning,
    NeutralFiller,
}

/// One free-generation outcome. `letter_commit` and `designated_logodds`
/// are oriented toward `designated` (+ when its slot is chosen/favoured).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub record_version: u32,
    pub model_id: String,
    pub scenario_id: String,
    pub pair: CountryPair,
    pub ordering: Ordering,
    pub scenario_language: Language,
    pub question_language: Language,
    pub polarity: Polarity,
    pub phrasing_id: PhrasingId,
    pub designated: String,
    pub text: String,
    pub n_tokens: usize,
    pub letter_commit: Option<i8>,
    pub commit_index: Option<usize>,
    /// Raw A − B log-odds at the commit.
    pub commit_logodds: Option<f64>,
    pub designated_logodds: Option<f64>,
    pub control_kind: ControlKind,
}

/// +1 when `designated` sits in slot A under `ordering`, −1 in slot B.
pub fn slot_sign(pair: &CountryPair, ordering: Ordering, designated: &str) -> Option<f64> {
    let (a, b) = pair.slots(ordering);
    if a == designated {
        Some(1.0)
    } else if b == designated {
        Some(-1.0)
    } else {
        None
    }
}

pub fn signed_letter(letter: Letter, slot_sign: f64) -> i8 {
    let raw = match letter {
        Letter::A => 1.0,
        Letter::B => -1.0,
    };
    if raw * slot_sign > 0.0 {
        1
    } else {
        -1
    }
}

/// Per-model aggregate of generation records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreegenSummary {
    pub model_id: String,
    pub control_kind: ControlKind,
    pub n: usize,
    /// Fraction of generations with a parseable letter.
    pub letter_compliance: f64,
    pub letter_mean: Option<f64>,
    pub commit_logodds_mean: Option<f64>,
}

pub fn summarize(model_id: &str, kind: ControlKind, records: &[GenerationRecord]) -> FreegenSummary {
    let rs: Vec<&GenerationRecord> = records
        .iter()
        .filter(|r| r.model_id == model_id && r.control_kind == kind)
        .collect();
    let letters: Vec<f64> = rs.iter().filter_map(|r| r.letter_commit.map(f64::from)).collect();
    let lo: Vec<f64> = rs.iter().filter_map(|r| r.designated_logodds).collect();
    FreegenSummary {
        model_id: model_id.to_string(),
        control_kind: kind,
        n: rs.len(),
        letter_compliance: if rs.is_empty() { 0.0 } else { letters.len() as f64 / rs.len() as f64 },
        letter_mean: crate::math::mean(&letters),
        commit_logodds_mean: crate::math::mean(&lo),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::TokenDistribution;
    use alloc::vec;
    use alloc::vec::Vec;

    fn gen(tokens: &[&str]) -> GenerationResult {
        let dists = tokens.iter().map(|t| TokenDistribution::certain(t)).collect();
        GenerationResult::new(tokens.iter().map(|t| t.to_string()).collect(), dists).unwrap()
    }

    #[test]
    fn last_parenthesized_letter_wins() {
        let g = gen(&["(A", ") is", " tempting", " but", " (", "B", ") is", " right"]);
        assert_eq!(parse_letter_commit(&g), Some((Letter::B, 5)));
        let g = gen(&["...", "therefore", " (B)"]);
        assert_eq!(parse_letter_commit(&g), Some((Letter::B, 2)));
    }

    #[test]
    fn bare_letter_after_cue() {
        let g = gen(&["Final", " answer", ":", " A"]);
        assert_eq!(parse_letter_commit(&g), Some((Letter::A, 3)));
        let g = gen(&["The", " answer", " is", " Bhutan"]);
        assert_eq!(parse_letter_commit(&g), None);
    }

    #[test]
    fn no_letter_is_none() {
        let tokens: Vec<&str> = core::iter::repeat_n(" and", 120).collect();
        assert_eq!(parse_letter_commit(&gen(&tokens)), None);
    }

    #[test]
    fn commit_logodds_reads_recorded_distribution() {
        let mut e = alloc::collections::BTreeMap::new();
        e.insert("A".to_string(), libm::log(0.7));
        e.insert("B".to_string(), libm::log(0.3));
        let d = TokenDistribution::new(e, 0.0).unwrap();
        let g = GenerationResult::new(vec!["(".into(), "A".into()], vec![TokenDistribution::certain("("), d]).unwrap();
        let p = crate::prompt::fixtures::chatml("q", None);
        let lo = commit_logodds(&g, 1, &p).unwrap();
        assert!((lo - libm::log(0.7 / 0.3)).abs() < 1e-12);
        assert!(matches!(commit_logodds(&g, 5, &p), Err(FreegenError::MissingDistribution { .. })));
        assert!(matches!(commit_logodds(&g, 0, &p), Err(FreegenError::Unscorable)));
    }

    #[test]
    fn signs() {
        let pair = CountryPair::new("CN", "US");
        assert_eq!(slot_sign(&pair, Ordering::Forward, "CN"), Some(1.0));
        assert_eq!(slot_sign(&pair, Ordering::Reverse, "CN"), Some(-1.0));
        assert_eq!(signed_letter(Letter::B, -1.0), 1);
        assert_eq!(signed_letter(Letter::A, -1.0), -1);
    }

    #[test]
    fn filler_must_be_country_free() {
        let p = Prompt {
            text: "x".into(),
            hedged: false,
            prefilled: false,
            neutralized: false,
        };
        assert!(filler_prompt(&p, NEUTRAL_FILLER, &["China", "USA"]).is_ok());
        assert!(matches!(
            filler_prompt(&p, "China acted first.", &["China"]),
            Err(FreegenError::FillerMentionsCountry(_))
        ));
        assert!(matches!(filler_prompt(&p, " ", &[]), Err(FreegenError::EmptyFiller)));
    }
}
