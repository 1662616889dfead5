//! Deterministic synthetic model used as a measurement oracle.
//!
//! The model reads the assembled prompt back (option lines, question text,
//! narrative, hedge, system message) and answers with a closed-form A/B
//! logit gap:
//!
//! `gap = β + s · m · (δ(A) − δ(B)) + noise`
//!
//! where `s` is −1 for the unjustified question under coherent fidelity and
//! +1 otherwise, and `m` multiplies the configured language, phrasing,
//! scenario, hedge and neutralization gains. Free generation follows a fixed
//! script that ends in `"\nFinal answer: ("`, where the letter distribution
//! reuses the same gap.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::{cos, log, sqrt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{Bank, Language, PhrasingId, Polarity, PLACEHOLDER_A, PLACEHOLDER_B};
use crate::math::{log_sigmoid, log_sum_exp};
use crate::prompt::{ModelProfile, TokenizerMode, NEUTRALIZATION_MESSAGE};
use crate::provider::{DistributionProvider, ModelInfo, ProviderError, TokenDistribution};

/// Token that absorbs answer-position mass not placed on A/B.
pub const OFF_ANSWER_TOKEN: &str = "Well";
pub use crate::freegen::ANSWER_SLOT;
pub const EOS: &str = "</s>";

const ANSWER_SLOT_TOKENS: [&str; 5] = ["\n", "Final", " answer", ":", " ("];
const REASONING_TOKENS: [&str; 14] = [
    "Weighing",
    " both",
    " accounts",
    ",",
    " one",
    " response",
    " looks",
    " more",
    " proportionate",
    " to",
    " the",
    " provocation",
    " than",
    " the other.",
];
const RAMBLE_TOKEN: &str = " and";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// The preferred answer flips with the question.
    #[default]
    Coherent,
    /// The same answer regardless of question polarity.
    Artefact,
}

/// How answer mass is split across surface forms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SyntheticTokenizer {
    /// All mass on the bare letters.
    #[default]
    SingleToken,
    /// Mass split over `"A"`, `" A"`, `"(A"`, `"\nA"` (and B analogues)
    /// with these weights.
    VariantSplit {
        bare: f64,
        space: f64,
        paren: f64,
        newline: f64,
    },
}

impl SyntheticTokenizer {
    fn split(&self, letter: &str) -> Vec<(String, f64)> {
        match *self {
            SyntheticTokenizer::SingleToken => alloc::vec![(letter.to_string(), 1.0)],
            SyntheticTokenizer::VariantSplit {
                bare,
                space,
                paren,
                newline,
            } => alloc::vec![
                (letter.to_string(), bare),
                (format!(" {letter}"), space),
                (format!("({letter}"), paren),
                (format!("\n{letter}"), newline),
            ],
        }
    }

    pub fn mode(&self) -> TokenizerMode {
        match self {
            SyntheticTokenizer::SingleToken => TokenizerMode::SingleToken,
            SyntheticTokenizer::VariantSplit { .. } => TokenizerMode::VariantSplit,
        }
    }
}

/// Fixed response-opening token and the mass it takes at a fresh answer position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplatePrefix {
    pub token: String,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreegenBehaviour {
    /// Multiplier on the preference after the model's own reasoning.
    #[serde(default = "one")]
    pub reasoning_gain: f64,
    /// Multiplier on the preference after a neutral filler.
    #[serde(default = "one")]
    pub filler_gain: f64,
    /// Positional bias at the commit, replacing `positional_bias` there.
    #[serde(default)]
    pub commit_positional_bias: Option<f64>,
    /// Never reach the answer slot.
    #[serde(default)]
    pub ramble: bool,
}

impl Default for FreegenBehaviour {
    fn default() -> Self {
        FreegenBehaviour {
            reasoning_gain: 1.0,
            filler_gain: 1.0,
            commit_positional_bias: None,
            ramble: false,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn some_zero() -> Option<f64> {
    Some(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    /// δ per country code.
    #[serde(default)]
    pub country_bias: BTreeMap<String, f64>,
    /// δ for countries missing from `country_bias` (0 unless set); `null`
    /// makes them an error.
    #[serde(default = "some_zero")]
    pub default_bias: Option<f64>,
    /// Additive δ per scenario language.
    #[serde(default)]
    pub language_country_bias: BTreeMap<Language, BTreeMap<String, f64>>,
    /// Gain per scenario language.
    #[serde(default)]
    pub language_scale: BTreeMap<Language, f64>,
    /// Gain per question language.
    #[serde(default)]
    pub question_language_scale: BTreeMap<Language, f64>,
    #[serde(default)]
    pub phrasing_scale: BTreeMap<PhrasingId, f64>,
    /// Gain per scenario id.
    #[serde(default)]
    pub scenario_scale: BTreeMap<String, f64>,
    /// β, added to the A side.
    #[serde(default)]
    pub positional_bias: f64,
    #[serde(default)]
    pub template: Option<TemplatePrefix>,
    /// Further non-answer tokens at a fresh answer position.
    #[serde(default)]
    pub preamble: Vec<(String, f64)>,
    /// Share of the non-diverted mass that lands on A/B.
    #[serde(default = "one")]
    pub answer_mass: f64,
    #[serde(default)]
    pub tokenizer: SyntheticTokenizer,
    #[serde(default)]
    pub polarity_fidelity: Fidelity,
    /// Per-scenario fidelity overrides.
    #[serde(default)]
    pub scenario_fidelity: BTreeMap<String, Fidelity>,
    #[serde(default = "one")]
    pub hedge_gain: f64,
    #[serde(default = "one")]
    pub neutralization_gain: f64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub freegen: FreegenBehaviour,
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        SyntheticModelSpec {
            country_bias: BTreeMap::new(),
            default_bias: Some(0.0),
            language_country_bias: BTreeMap::new(),
            language_scale: BTreeMap::new(),
            question_language_scale: BTreeMap::new(),
            phrasing_scale: BTreeMap::new(),
            scenario_scale: BTreeMap::new(),
            positional_bias: 0.0,
            template: None,
            preamble: Vec::new(),
            answer_mass: 1.0,
            tokenizer: SyntheticTokenizer::SingleToken,
            polarity_fidelity: Fidelity::Coherent,
            scenario_fidelity: BTreeMap::new(),
            hedge_gain: 1.0,
            neutralization_gain: 1.0,
            noise_scale: 0.0,
            seed: 0,
            freegen: FreegenBehaviour::default(),
        }
    }
}

impl SyntheticModelSpec {
    pub fn with_bias(mut self, code: &str, delta: f64) -> Self {
        self.country_bias.insert(code.to_string(), delta);
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::InvalidRequest(m));
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.country_bias.values().any(|d| !d.is_finite()) || self.default_bias.is_some_and(|d| !d.is_finite())
        {
            return bad("country bias must be finite".into());
        }
        if !self.positional_bias.is_finite() {
            return bad("positional bias must be finite".into());
        }
        let diverted = self.template.as_ref().map_or(0.0, |t| t.mass)
            + self.preamble.iter().map(|(_, m)| m).sum::<f64>();
        if let Some(t) = &self.template {
            if !in_unit(t.mass) || t.token.is_empty() {
                return bad(format!("template mass {} outside [0, 1]", t.mass));
            }
        }
        if self.preamble.iter().any(|(_, m)| !in_unit(*m)) || diverted > 1.0 + 1e-12 {
            return bad(format!("diverted mass {diverted} exceeds 1"));
        }
        if !in_unit(self.answer_mass) {
            return bad(format!("answer mass {} outside [0, 1]", self.answer_mass));
        }
        if let SyntheticTokenizer::VariantSplit {
            bare,
            space,
            paren,
            newline,
        } = self.tokenizer
        {
            let w = [bare, space, paren, newline];
            if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("variant weights must be non-negative and sum to 1".into());
            }
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise scale must be ≥ 0".into());
        }
        Ok(())
    }

    fn delta(&self, code: &str, language: Language) -> Result<f64, ProviderError> {
        let base = self
            .country_bias
            .get(code)
            .copied()
            .or(self.default_bias)
            .ok_or_else(|| ProviderError::Model(format!("unknown country `{code}`")))?;
        let extra = self
            .language_country_bias
            .get(&language)
            .and_then(|m| m.get(code))
            .copied()
            .unwrap_or(0.0);
        Ok(base + extra)
    }
}

/// Coordinates of a query as the synthetic model sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticContext {
    pub country_a: String,
    pub country_b: String,
    pub scenario_id: String,
    pub scenario_language: Language,
    pub question_language: Language,
    pub polarity: Polarity,
    pub phrasing_id: PhrasingId,
    pub hedged: bool,
    pub neutralized: bool,
    pub freegen: bool,
}

/// Where generation stands after the answer anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Position {
    /// Fresh forced-choice answer position.
    Answer { prefilled: bool },
    /// Letter distribution at the free-generation answer slot.
    Commit { gain: f64 },
    /// A token fixed by the script.
    Fixed(&'static str),
}

#[derive(Clone, Debug)]
struct Matcher {
    code_by_name: Vec<(String, String)>,
    questions: Vec<(String, Language, Polarity, PhrasingId)>,
    narratives: Vec<(String, String, Language)>,
    hedges: Vec<String>,
    freegen: Vec<String>,
    cues: Vec<String>,
}

impl Matcher {
    fn new(bank: &Bank) -> Self {
        let mut code_by_name = Vec::new();
        for c in &bank.countries {
            for name in c.display_name.0.values() {
                code_by_name.push((name.clone(), c.code.clone()));
            }
        }
        let mut questions = Vec::new();
        for q in &bank.questions {
            for (l, t) in &q.text.0 {
                questions.push((t.clone(), *l, q.polarity, q.phrasing_id));
            }
        }
        // longest match wins
        questions.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        let mut narratives = Vec::new();
        for s in &bank.scenarios {
            for (l, text) in &s.narrative.0 {
                let frag = text
                    .split(PLACEHOLDER_A)
                    .flat_map(|p| p.split(PLACEHOLDER_B))
                    .max_by_key(|p| p.len())
                    .unwrap_or("")
                    .to_string();
                narratives.push((frag, s.id.clone(), *l));
            }
        }
        narratives.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        let values = |loc: &crate::bank::Localized| loc.0.values().cloned().collect::<Vec<_>>();
        Matcher {
            code_by_name,
            questions,
            narratives,
            hedges: values(&bank.instructions.hedge),
            freegen: values(&bank.instructions.freegen),
            cues: values(&bank.instructions.answer_cue),
        }
    }

    fn option(&self, head: &str, label: &str) -> Result<String, ProviderError> {
        let at = head
            .rfind(label)
            .ok_or_else(|| ProviderError::InvalidRequest(format!("no `{}` option line", label.trim())))?;
        let rest = &head[at + label.len()..];
        let name = rest.split('\n').next().unwrap_or("");
        self.code_by_name
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| ProviderError::Model(format!("unknown country name `{name}`")))
    }

    fn context(&self, head: &str) -> Result<SyntheticContext, ProviderError> {
        let (_, question_language, polarity, phrasing_id) = self
            .questions
            .iter()
            .find(|q| !q.0.is_empty() && head.contains(&q.0))
            .cloned()
            .ok_or_else(|| ProviderError::InvalidRequest("no known question in prompt".into()))?;
        let (_, scenario_id, scenario_language) = self
            .narratives
            .iter()
            .find(|n| !n.0.is_empty() && head.contains(&n.0))
            .cloned()
            .ok_or_else(|| ProviderError::InvalidRequest("no known narrative in prompt".into()))?;
        Ok(SyntheticContext {
            country_a: self.option(head, "\n(A) ")?,
            country_b: self.option(head, "\n(B) ")?,
            scenario_id,
            scenario_language,
            question_language,
            polarity,
            phrasing_id,
            hedged: self.hedges.iter().any(|h| !h.is_empty() && head.contains(h.as_str())),
            neutralized: head.contains(NEUTRALIZATION_MESSAGE),
            freegen: self.freegen.iter().any(|f| !f.is_empty() && head.contains(f.as_str())),
        })
    }
}

/// A [`DistributionProvider`] backed by a [`SyntheticModelSpec`].
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    model_id: String,
    anchors: Vec<String>,
    matcher: Matcher,
}

impl SyntheticModel {
    /// The profile supplies the model id and the answer anchor (end of the
    /// chat template); the bank supplies the texts the model recognizes.
    pub fn new(spec: SyntheticModelSpec, profile: &ModelProfile, bank: &Bank) -> Result<Self, ProviderError> {
        spec.validate()?;
        let matcher = Matcher::new(bank);
        let anchors = match profile.answer_anchor() {
            Some(a) if !a.is_empty() => alloc::vec![a],
            _ => matcher.cues.clone(),
        };
        Ok(SyntheticModel {
            spec,
            model_id: profile.id.clone(),
            anchors,
            matcher,
        })
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    /// Split a prompt at the last answer anchor.
    fn split<'p>(&self, prompt: &'p str) -> Result<(&'p str, &'p str), ProviderError> {
        let best = self
            .anchors
            .iter()
            .filter_map(|a| prompt.rfind(a.as_str()).map(|i| (i, i + a.len())))
            .max_by_key(|&(start, _)| start)
            .ok_or_else(|| ProviderError::InvalidRequest("prompt has no answer position".into()))?;
        Ok((&prompt[..best.0], &prompt[best.1..]))
    }

    fn script() -> impl Iterator<Item = &'static str> {
        REASONING_TOKENS.iter().chain(ANSWER_SLOT_TOKENS.iter()).copied()
    }

    fn position(&self, ctx: &SyntheticContext, cont: &str) -> Position {
        if !ctx.freegen {
            if cont.is_empty() {
                return Position::Answer { prefilled: false };
            }
            if self.spec.template.as_ref().is_some_and(|t| t.token == cont) {
                return Position::Answer { prefilled: true };
            }
            return Position::Fixed(EOS);
        }
        if self.spec.freegen.ramble {
            return Position::Fixed(RAMBLE_TOKEN);
        }
        if let Some(at) = cont.rfind(ANSWER_SLOT) {
            let after = &cont[at + ANSWER_SLOT.len()..];
            if after.is_empty() {
                let own: String = Self::script().collect();
                let gain = if cont == own {
                    self.spec.freegen.reasoning_gain
                } else {
                    self.spec.freegen.filler_gain
                };
                return Position::Commit { gain };
            }
            return if after.ends_with(')') { Position::Fixed(EOS) } else { Position::Fixed(")") };
        }
        let mut at = 0;
        for tok in Self::script() {
            if at == cont.len() {
                return Position::Fixed(tok);
            }
            if !cont[at..].starts_with(tok) {
                break;
            }
            at += tok.len();
        }
        Position::Fixed(EOS)
    }

    /// `β + s·m·(δA − δB) + noise` for this context.
    pub fn gap(&self, ctx: &SyntheticContext, beta: f64, gain: f64, noise_key: &str) -> Result<f64, ProviderError> {
        let s = &self.spec;
        let fidelity = s.scenario_fidelity.get(&ctx.scenario_id).copied().unwrap_or(s.polarity_fidelity);
        let sign = match (fidelity, ctx.polarity) {
            (Fidelity::Coherent, Polarity::Unjustified) => -1.0,
            _ => 1.0,
        };
        let mut m = gain;
        m *= s.language_scale.get(&ctx.scenario_language).copied().unwrap_or(1.0);
        m *= s.question_language_scale.get(&ctx.question_language).copied().unwrap_or(1.0);
        m *= s.phrasing_scale.get(&ctx.phrasing_id).copied().unwrap_or(1.0);
        m *= s.scenario_scale.get(&ctx.scenario_id).copied().unwrap_or(1.0);
        if ctx.hedged {
            m *= s.hedge_gain;
        }
        if ctx.neutralized {
            m *= s.neutralization_gain;
        }
        let d = s.delta(&ctx.country_a, ctx.scenario_language)? - s.delta(&ctx.country_b, ctx.scenario_language)?;
        Ok(beta + sign * m * d + s.noise_scale * standard_normal(s.seed, noise_key))
    }

    /// Distribution over answer tokens and diverted mass.
    fn answer_distribution(&self, gap: f64, prefilled: bool) -> Result<TokenDistribution, ProviderError> {
        let s = &self.spec;
        let mut parts: Vec<(String, f64)> = Vec::new();
        let mut diverted = 0.0;
        if !prefilled {
            if let Some(t) = &s.template {
                parts.push((t.token.clone(), log(t.mass)));
                diverted += t.mass;
            }
            for (tok, m) in &s.preamble {
                parts.push((tok.clone(), log(*m)));
                diverted += m;
            }
        }
        let available = (1.0 - diverted).max(0.0);
        let on_answer = available * s.answer_mass;
        if on_answer > 0.0 {
            let ln_scale = log(on_answer);
            for (letter, side) in [("A", log_sigmoid(gap)), ("B", log_sigmoid(-gap))] {
                for (tok, w) in s.tokenizer.split(letter) {
                    if w > 0.0 {
                        parts.push((tok, ln_scale + side + log(w)));
                    }
                }
            }
        }
        let off = available - on_answer;
        if off > 0.0 {
            parts.push((OFF_ANSWER_TOKEN.to_string(), log(off)));
        }
        Ok(TokenDistribution::new(merge(parts), 0.0)?)
    }

    /// Letter distribution at the free-generation answer slot (bare letters).
    fn commit_distribution(&self, gap: f64) -> Result<TokenDistribution, ProviderError> {
        let parts = alloc::vec![("A".to_string(), log_sigmoid(gap)), ("B".to_string(), log_sigmoid(-gap))];
        Ok(TokenDistribution::new(merge(parts), 0.0)?)
    }

    /// Recover the coordinates of a prompt, for tests and diagnostics.
    pub fn read_context(&self, prompt: &str) -> Result<SyntheticContext, ProviderError> {
        let (head, _) = self.split(prompt)?;
        self.matcher.context(head)
    }
}

fn merge(parts: Vec<(String, f64)>) -> BTreeMap<String, f64> {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (t, lp) in parts {
        grouped.entry(t).or_default().push(lp);
    }
    grouped.into_iter().map(|(t, lps)| (t, log_sum_exp(&lps))).collect()
}

/// Seeded standard normal keyed by an arbitrary string (Box–Muller over SHA-256).
pub fn standard_normal(seed: u64, key: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    let word = |i: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[i..i + 8]);
        u64::from_le_bytes(b)
    };
    let unit = |x: u64| ((x >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let (u1, u2) = (unit(word(0)), unit(word(8)));
    sqrt(-2.0 * log(u1)) * cos(2.0 * core::f64::consts::PI * u2)
}

impl DistributionProvider for SyntheticModel {
    fn info(&self) -> Result<ModelInfo, ProviderError> {
        Ok(ModelInfo {
            model_id: self.model_id.clone(),
            tokenizer_mode: self.spec.tokenizer.mode(),
        })
    }

    fn next_token_distribution(&self, prompt: &str, _requested: &[String]) -> Result<TokenDistribution, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        let (head, cont) = self.split(prompt)?;
        let ctx = self.matcher.context(head)?;
        match self.position(&ctx, cont) {
            Position::Fixed(tok) => Ok(TokenDistribution::certain(tok)),
            Position::Answer { prefilled } => {
                let gap = self.gap(&ctx, self.spec.positional_bias, 1.0, head)?;
                self.answer_distribution(gap, prefilled)
            }
            Position::Commit { gain } => {
                let beta = self.spec.freegen.commit_positional_bias.unwrap_or(self.spec.positional_bias);
                let gap = self.gap(&ctx, beta, gain, head)?;
                self.commit_distribution(gap)
            }
        }
    }
}
