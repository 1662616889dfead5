//! Model profiles and byte-deterministic prompt assembly.
//!
//! Chat templates are data: literal wrapper segments around the system and
//! user turns plus the assistant opening. A prompt always ends at the answer
//! position, so a provider's next-token distribution is read at exactly one
//! place.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{
    Bank, BankError, Bloc, CountryPair, Language, Ordering, PhrasingId, Polarity,
};

/// System message for the neutralization ablation.
pub const NEUTRALIZATION_MESSAGE: &str =
    "Answer as neutrally as possible regardless of countries involved.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatWrappers {
    #[serde(default)]
    pub bos: String,
    #[serde(default)]
    pub system: Option<Segment>,
    /// Used when the probe supplies no system message of its own.
    #[serde(default)]
    pub default_system: Option<String>,
    pub user: Segment,
    pub assistant_prefix: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatTemplate {
    /// Base models: the prompt body is sent as-is.
    Raw,
    Chat(ChatWrappers),
}

impl ChatTemplate {
    pub fn has_system_slot(&self) -> bool {
        matches!(self, ChatTemplate::Chat(w) if w.system.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    SingleToken,
    VariantSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MakerBloc {
    Western,
    Chinese,
}

impl MakerBloc {
    pub fn as_bloc(self) -> Bloc {
        match self {
            MakerBloc::Western => Bloc::Western,
            MakerBloc::Chinese => Bloc::Chinese,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub id: String,
    /// Groups a base checkpoint with its post-trained variant.
    pub family: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub maker_bloc: MakerBloc,
    pub chat_template: ChatTemplate,
    pub tokenizer_mode: TokenizerMode,
    pub answer_variants_a: Vec<String>,
    pub answer_variants_b: Vec<String>,
    #[serde(default)]
    pub prefill_token: Option<String>,
    pub hedge_enabled: bool,
    pub is_post_trained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("profile {profile}: {rule}")]
    InvalidProfile { profile: String, rule: &'static str },
    #[error("profile {0} has no system slot")]
    NoSystemSlot(String),
    #[error("profile {0} is not post-trained")]
    NotPostTrained(String),
    #[error(transparent)]
    Bank(#[from] BankError),
}

/// Longest prefill accepted; prefill is a single response-opening token.
const MAX_PREFILL_BYTES: usize = 16;

impl ModelProfile {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |rule| {
            Err(PromptError::InvalidProfile {
                profile: self.id.clone(),
                rule,
            })
        };
        if self.answer_variants_a.is_empty() || self.answer_variants_b.is_empty() {
            return bad("answer variant sets must be non-empty");
        }
        if self
            .answer_variants_a
            .iter()
            .any(|a| self.answer_variants_b.contains(a))
        {
            return bad("answer variant sets must be disjoint");
        }
        if let Some(p) = &self.prefill_token {
            if p.is_empty() || p.len() > MAX_PREFILL_BYTES {
                return bad("prefill_token must be a single non-empty token string");
            }
        }
        if self.chat_template == ChatTemplate::Raw && self.hedge_enabled {
            return bad("raw-template profiles cannot enable the hedge by default");
        }
        Ok(())
    }

    /// Text that ends every unprefilled prompt for this profile.
    pub fn answer_anchor(&self) -> Option<String> {
        match &self.chat_template {
            ChatTemplate::Raw => None,
            ChatTemplate::Chat(w) => {
                let mut s = w.user.suffix.clone();
                s.push_str(&w.assistant_prefix);
                Some(s)
            }
        }
    }

    pub fn label(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeOverride {
    #[default]
    Default,
    ForceOn,
    ForceOff,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefillOverride {
    #[default]
    Default,
    None,
}

/// Coordinates of one probe query apart from model, scenario and pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub scenario_language: Language,
    pub question_language: Language,
    pub polarity: Polarity,
    #[serde(default)]
    pub phrasing_id: PhrasingId,
    pub ordering: Ordering,
    #[serde(default)]
    pub hedge: HedgeOverride,
    #[serde(default)]
    pub system_message: Option<String>,
    #[serde(default)]
    pub prefill: PrefillOverride,
}

impl ProbeSpec {
    pub fn new(language: Language, polarity: Polarity, ordering: Ordering) -> Self {
        ProbeSpec {
            scenario_language: language,
            question_language: language,
            polarity,
            phrasing_id: PhrasingId::Default,
            ordering,
            hedge: HedgeOverride::Default,
            system_message: None,
            prefill: PrefillOverride::Default,
        }
    }
}

/// Languages crossed by the default cross-prompting factorial.
pub const FACTORIAL_LANGUAGES: [Language; 2] = [Language::En, Language::Zh];

/// Scenario language × question language, fully crossed, scenario-major.
pub fn factorial_specs(languages: &[Language], base: &ProbeSpec) -> Vec<ProbeSpec> {
    let mut out = Vec::with_capacity(languages.len() * languages.len());
    for &s in languages {
        for &q in languages {
            let mut spec = base.clone();
            spec.scenario_language = s;
            spec.question_language = q;
            out.push(spec);
        }
    }
    out
}

/// Localized pieces of one probe: narrative in the scenario language, the
/// MCQ framing in the question language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptParts {
    pub hedge: String,
    pub narrative: String,
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    pub answer_cue: String,
    pub freegen_instruction: String,
}

impl PromptParts {
    pub fn build(
        bank: &Bank,
        scenario_id: &str,
        pair: &CountryPair,
        spec: &ProbeSpec,
    ) -> Result<Self, BankError> {
        let ql = spec.question_language;
        let narrative = bank.narrative(scenario_id, pair, spec.ordering, spec.scenario_language)?;
        let (code_a, code_b) = pair.slots(spec.ordering);
        let question = bank.question(spec.polarity, spec.phrasing_id)?;
        let text = |loc: &crate::bank::Localized, what: &str| {
            loc.get(ql).map(String::from).ok_or_else(|| BankError::MissingText {
                record: String::from(what),
                language: ql,
            })
        };
        Ok(PromptParts {
            hedge: text(&bank.instructions.hedge, "instructions.hedge")?,
            narrative,
            question: text(&question.text, "question")?,
            option_a: bank.display_name(code_a, ql)?.into(),
            option_b: bank.display_name(code_b, ql)?.into(),
            answer_cue: text(&bank.instructions.answer_cue, "instructions.answer_cue")?,
            freegen_instruction: text(&bank.instructions.freegen, "instructions.freegen")?,
        })
    }
}

/// An assembled prompt and the protocol flags that were in effect.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub hedged: bool,
    pub prefilled: bool,
    pub neutralized: bool,
}

pub(crate) fn hedge_in_effect(profile: &ModelProfile, hedge: HedgeOverride) -> bool {
    match hedge {
        HedgeOverride::Default => profile.hedge_enabled,
        HedgeOverride::ForceOn => true,
        HedgeOverride::ForceOff => false,
    }
}

/// Hedge, narrative, question and the two option lines.
pub(crate) fn mcq_body(parts: &PromptParts, hedged: bool) -> String {
    let mut body = String::new();
    if hedged {
        body.push_str(&parts.hedge);
        body.push_str("\n\n");
    }
    body.push_str(&parts.narrative);
    body.push_str("\n\n");
    body.push_str(&parts.question);
    body.push_str("\n(A) ");
    body.push_str(&parts.option_a);
    body.push_str("\n(B) ");
    body.push_str(&parts.option_b);
    body
}

/// Wrap user content in the profile's template and open the assistant turn.
pub(crate) fn wrap(
    profile: &ModelProfile,
    system: Option<&str>,
    content: &str,
    prefill: Option<&str>,
) -> Result<String, PromptError> {
    let mut out = String::new();
    match &profile.chat_template {
        ChatTemplate::Raw => {
            if system.is_some() {
                return Err(PromptError::NoSystemSlot(profile.id.clone()));
            }
            out.push_str(content);
        }
        ChatTemplate::Chat(w) => {
            out.push_str(&w.bos);
            let system = system.or(w.default_system.as_deref());
            if let Some(msg) = system {
                let seg = w
                    .system
                    .as_ref()
                    .ok_or_else(|| PromptError::NoSystemSlot(profile.id.clone()))?;
                out.push_str(&seg.prefix);
                out.push_str(msg);
                out.push_str(&seg.suffix);
            }
            out.push_str(&w.user.prefix);
            out.push_str(content);
            out.push_str(&w.user.suffix);
            out.push_str(&w.assistant_prefix);
        }
    }
    if let Some(p) = prefill {
        out.push_str(p);
    }
    Ok(out)
}

/// Assemble the forced-choice prompt. Pure; identical inputs give identical bytes.
pub fn assemble(
    profile: &ModelProfile,
    parts: &PromptParts,
    spec: &ProbeSpec,
) -> Result<Prompt, PromptError> {
    profile.validate()?;
    let hedged = hedge_in_effect(profile, spec.hedge);
    let mut content = mcq_body(parts, hedged);
    content.push('\n');
    content.push_str(&parts.answer_cue);
    let prefill = match spec.prefill {
        PrefillOverride::Default => profile.prefill_token.as_deref(),
        PrefillOverride::None => None,
    };
    let text = wrap(profile, spec.system_message.as_deref(), &content, prefill)?;
    Ok(Prompt {
        text,
        hedged,
        prefilled: prefill.is_some(),
        neutralized: spec.system_message.as_deref() == Some(NEUTRALIZATION_MESSAGE),
    })
}

/// [`assemble`] with the neutralization system message replacing any other.
pub fn neutralization_prompt(
    profile: &ModelProfile,
    parts: &PromptParts,
    spec: &ProbeSpec,
) -> Result<Prompt, PromptError> {
    if !profile.chat_template.has_system_slot() {
        return Err(PromptError::NoSystemSlot(profile.id.clone()));
    }
    let mut spec = spec.clone();
    spec.system_message = Some(NEUTRALIZATION_MESSAGE.into());
    assemble(profile, parts, &spec)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::bank::fixtures::small_bank;
    use crate::bank::HEDGE_EN;
    use alloc::string::ToString;

    fn parts(spec: &ProbeSpec) -> PromptParts {
        PromptParts::build(&small_bank(), "airspace_01", &CountryPair::new("US", "CN"), spec)
            .unwrap()
    }

    fn spec() -> ProbeSpec {
        ProbeSpec::new(Language::En, Polarity::Justified, Ordering::Forward)
    }

    #[test]
    fn instruct_prompt_carries_hedge_and_ends_at_assistant_turn() {
        let p = assemble(&chatml("q", None), &parts(&spec()), &spec()).unwrap();
        assert!(p.text.contains(
            "This is a difficult situation with valid perspectives on both sides"
        ));
        assert!(p.hedged);
        assert!(p.text.ends_with("Answer:<|im_end|>\n<|im_start|>assistant\n"));
        assert!(p.text.contains("\n(A) China\n(B) USA\n"));
    }

    #[test]
    fn raw_prompt_has_no_wrappers_and_no_hedge() {
        let p = assemble(&raw_base("b"), &parts(&spec()), &spec()).unwrap();
        assert!(!p.text.contains("<|"));
        assert!(!p.text.contains(HEDGE_EN));
        assert!(p.text.starts_with("A China military aircraft"));
        assert!(p.text.ends_with("(B) USA\nAnswer:"));
    }

    #[test]
    fn hedge_override_on_raw() {
        let mut s = spec();
        s.hedge = HedgeOverride::ForceOn;
        let p = assemble(&raw_base("b"), &parts(&s), &s).unwrap();
        assert!(p.text.starts_with(HEDGE_EN));
        assert!(p.hedged);
        s.hedge = HedgeOverride::ForceOff;
        let p = assemble(&chatml("q", None), &parts(&s), &s).unwrap();
        assert!(!p.text.contains(HEDGE_EN));
    }

    #[test]
    fn glm_prefill_newline_ends_prompt() {
        let p = assemble(&glm_chat(), &parts(&spec()), &spec()).unwrap();
        assert!(p.text.ends_with("<|assistant|>\n"));
        assert!(p.prefilled);
        let mut s = spec();
        s.prefill = PrefillOverride::None;
        let p = assemble(&glm_chat(), &parts(&s), &s).unwrap();
        assert!(p.text.ends_with("<|assistant|>"));
        assert!(!p.prefilled);
    }

    #[test]
    fn neutralization_sets_system_segment() {
        let prof = chatml("q", Some("You are a helpful assistant."));
        let p = neutralization_prompt(&prof, &parts(&spec()), &spec()).unwrap();
        let sys = alloc::format!("<|im_start|>system\n{NEUTRALIZATION_MESSAGE}<|im_end|>\n");
        assert!(p.text.starts_with(&sys));
        assert!(p.neutralized);
        assert!(!p.text.contains("helpful assistant"));
    }

    #[test]
    fn neutralization_replaces_existing_system_message() {
        let prof = chatml("q", None);
        let mut s = spec();
        s.system_message = Some("Be terse.".into());
        let before = assemble(&prof, &parts(&s), &s).unwrap();
        let after = neutralization_prompt(&prof, &parts(&s), &s).unwrap();
        assert!(before.text.contains("Be terse."));
        assert!(!after.text.contains("Be terse."));
        // only the system segment differs
        let tail = |t: &str| t.split_once("<|im_end|>\n").unwrap().1.to_string();
        assert_eq!(tail(&before.text), tail(&after.text));
    }

    #[test]
    fn neutralization_requires_system_slot() {
        let err = neutralization_prompt(&raw_base("b"), &parts(&spec()), &spec()).unwrap_err();
        assert_eq!(err, PromptError::NoSystemSlot("b".into()));
    }

    #[test]
    fn factorial_counts() {
        assert_eq!(factorial_specs(&FACTORIAL_LANGUAGES, &spec()).len(), 4);
        assert_eq!(factorial_specs(&[Language::En], &spec()).len(), 1);
        let nine = factorial_specs(&Language::ALL, &spec());
        assert_eq!(nine.len(), 9);
        // brute-force cross product
        for s in Language::ALL {
            for q in Language::ALL {
                assert!(nine
                    .iter()
                    .any(|p| p.scenario_language == s && p.question_language == q));
            }
        }
    }

    #[test]
    fn profile_validation() {
        let mut p = chatml("q", None);
        p.answer_variants_b = alloc::vec!["A".into()];
        assert!(p.validate().is_err());
        let mut p = raw_base("b");
        p.hedge_enabled = true;
        assert!(p.validate().is_err());
        let mut p = chatml("q", None);
        p.prefill_token = Some(String::new());
        assert!(p.validate().is_err());
        let mut p = chatml("q", None);
        p.answer_variants_a.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn assemble_is_deterministic() {
        let a = assemble(&glm_chat(), &parts(&spec()), &spec()).unwrap();
        let b = assemble(&glm_chat(), &parts(&spec()), &spec()).unwrap();
        assert_eq!(a, b);
    }
}
