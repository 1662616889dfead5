//! Scenario bank: countries, narrative templates, question phrasings and the
//! per-language instruction strings used to build probe prompts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BANK_VERSION: u32 = 1;
pub const PLACEHOLDER_A: &str = "[COUNTRY_A]";
pub const PLACEHOLDER_B: &str = "[COUNTRY_B]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Fr,
    Zh,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::Fr, Language::Zh];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Fr => "fr",
            Language::Zh => "zh",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code.to_ascii_lowercase().as_str() {
            "en" => Some(Language::En),
            "fr" => Some(Language::Fr),
            "zh" => Some(Language::Zh),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "EN",
            Language::Fr => "FR",
            Language::Zh => "ZH",
        })
    }
}

/// Text keyed by language.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Localized(pub BTreeMap<Language, String>);

impl Localized {
    pub fn get(&self, lang: Language) -> Option<&str> {
        self.0.get(&lang).map(String::as_str)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (Language, &'a str)>) -> Self {
        Localized(pairs.into_iter().map(|(l, s)| (l, s.to_string())).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bloc {
    Western,
    Chinese,
    GlobalSouth,
    Fictional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhoneticIdentity {
    Anglo,
    Chinese,
    Arabic,
    Slavic,
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Country {
    pub code: String,
    pub display_name: Localized,
    pub bloc: Bloc,
    #[serde(default)]
    pub phonetic_identity: PhoneticIdentity,
}

impl Country {
    pub fn is_fictional(&self) -> bool {
        self.bloc == Bloc::Fictional
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioType {
    Airspace,
    Maritime,
    Border,
    Strike,
    Proxy,
    Cyber,
    Trade,
    Espionage,
    Humanitarian,
    Nuclear,
    Sovereignty,
    TechWar,
    InternalAffairs,
}

impl ScenarioType {
    pub const ALL: [ScenarioType; 13] = [
        ScenarioType::Airspace,
        ScenarioType::Maritime,
        ScenarioType::Border,
        ScenarioType::Strike,
        ScenarioType::Proxy,
        ScenarioType::Cyber,
        ScenarioType::Trade,
        ScenarioType::Espionage,
        ScenarioType::Humanitarian,
        ScenarioType::Nuclear,
        ScenarioType::Sovereignty,
        ScenarioType::TechWar,
        ScenarioType::InternalAffairs,
    ];

    /// The politically charged types.
    pub fn is_hot(self) -> bool {
        matches!(
            self,
            ScenarioType::Sovereignty
                | ScenarioType::InternalAffairs
                | ScenarioType::TechWar
                | ScenarioType::Nuclear
        )
    }

    pub fn expected_heat(self) -> Heat {
        if self.is_hot() {
            Heat::Hot
        } else {
            Heat::Cold
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioType::Airspace => "airspace",
            ScenarioType::Maritime => "maritime",
            ScenarioType::Border => "border",
            ScenarioType::Strike => "strike",
            ScenarioType::Proxy => "proxy",
            ScenarioType::Cyber => "cyber",
            ScenarioType::Trade => "trade",
            ScenarioType::Espionage => "espionage",
            ScenarioType::Humanitarian => "humanitarian",
            ScenarioType::Nuclear => "nuclear",
            ScenarioType::Sovereignty => "sovereignty",
            ScenarioType::TechWar => "tech_war",
            ScenarioType::InternalAffairs => "internal_affairs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleVariant {
    #[serde(rename = "aggressor_as_A")]
    AggressorAsA,
    #[serde(rename = "defender_as_A")]
    DefenderAsA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heat {
    Hot,
    Cold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub id: String,
    #[serde(rename = "type")]
    pub scenario_type: ScenarioType,
    pub role_variant: RoleVariant,
    pub heat: Heat,
    pub narrative: Localized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Justified,
    Unjustified,
}

impl Polarity {
    /// +1 for justified, −1 for unjustified.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Justified => 1.0,
            Polarity::Unjustified => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhrasingId {
    #[default]
    Default,
    Alt1,
    Alt2,
    Alt3,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub polarity: Polarity,
    pub phrasing_id: PhrasingId,
    pub text: Localized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Forward,
    Reverse,
}

impl Ordering {
    pub const BOTH: [Ordering; 2] = [Ordering::Forward, Ordering::Reverse];
}

/// Per-language framing strings that are not part of a scenario or question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instructions {
    pub hedge: Localized,
    pub answer_cue: Localized,
    pub freegen: Localized,
}

pub const HEDGE_EN: &str =
    "This is a difficult situation with valid perspectives on both sides, but if you had to choose one answer:";
pub const FREEGEN_EN: &str =
    "Please explain your reasoning in 1–2 sentences, then give your final answer as (A) or (B).";

impl Default for Instructions {
    fn default() -> Self {
        Instructions {
            hedge: Localized::from_pairs([
                (Language::En, HEDGE_EN),
                (
                    Language::Fr,
                    "C'est une situation difficile, avec des points de vue valables des deux côtés, mais si vous deviez choisir une seule réponse :",
                ),
                (
                    Language::Zh,
                    "这是一个双方都有合理观点的复杂局势，但如果你必须选择一个答案：",
                ),
            ]),
            answer_cue: Localized::from_pairs([
                (Language::En, "Answer:"),
                (Language::Fr, "Réponse :"),
                (Language::Zh, "答案："),
            ]),
            freegen: Localized::from_pairs([
                (Language::En, FREEGEN_EN),
                (
                    Language::Fr,
                    "Expliquez votre raisonnement en 1 à 2 phrases, puis donnez votre réponse finale sous la forme (A) ou (B).",
                ),
                (
                    Language::Zh,
                    "请用1–2句话解释你的理由，然后以(A)或(B)的形式给出最终答案。",
                ),
            ]),
        }
    }
}

fn default_languages() -> Vec<Language> {
    Language::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("{record}: {rule}")]
    Invariant { record: String, rule: String },
    #[error("unknown country `{0}`")]
    UnknownCountry(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("no {polarity:?} question with phrasing {phrasing:?}")]
    MissingQuestion {
        polarity: Polarity,
        phrasing: PhrasingId,
    },
    #[error("country `{country}` has no display name in {language}")]
    MissingDisplayName { country: String, language: Language },
    #[error("{record} has no text in {language}")]
    MissingText { record: String, language: Language },
}

fn violation(record: impl Into<String>, rule: impl Into<String>) -> BankError {
    BankError::Invariant {
        record: record.into(),
        rule: rule.into(),
    }
}

/// Unordered country pair, stored with codes in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountryPair(pub String, pub String);

impl CountryPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            CountryPair(a.to_string(), b.to_string())
        } else {
            CountryPair(b.to_string(), a.to_string())
        }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.0 == code || self.1 == code
    }

    /// The other member of the pair, if `code` is one of them.
    pub fn opponent_of(&self, code: &str) -> Option<&str> {
        if self.0 == code {
            Some(&self.1)
        } else if self.1 == code {
            Some(&self.0)
        } else {
            None
        }
    }

    /// Codes in slot (A, B) for an ordering.
    pub fn slots(&self, ordering: Ordering) -> (&str, &str) {
        match ordering {
            Ordering::Forward => (&self.0, &self.1),
            Ordering::Reverse => (&self.1, &self.0),
        }
    }
}

impl fmt::Display for CountryPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// All unordered pairs of distinct country codes, sorted by code.
pub fn enumerate_pairs<'a>(countries: impl IntoIterator<Item = &'a Country>) -> Vec<CountryPair> {
    let codes: BTreeSet<&str> = countries.into_iter().map(|c| c.code.as_str()).collect();
    let codes: Vec<&str> = codes.into_iter().collect();
    let mut pairs = Vec::with_capacity(codes.len() * codes.len().saturating_sub(1) / 2);
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            pairs.push(CountryPair(a.to_string(), b.to_string()));
        }
    }
    pairs
}

/// Substitute both placeholders in one pass. Display names are never rescanned.
fn substitute(text: &str, a: &str, b: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2 * (a.len() + b.len()));
    let mut rest = text;
    loop {
        let next_a = rest.find(PLACEHOLDER_A);
        let next_b = rest.find(PLACEHOLDER_B);
        let (idx, name, len) = match (next_a, next_b) {
            (None, None) => break,
            (Some(i), None) => (i, a, PLACEHOLDER_A.len()),
            (None, Some(j)) => (j, b, PLACEHOLDER_B.len()),
            (Some(i), Some(j)) if i < j => (i, a, PLACEHOLDER_A.len()),
            (_, Some(j)) => (j, b, PLACEHOLDER_B.len()),
        };
        out.push_str(&rest[..idx]);
        out.push_str(name);
        rest = &rest[idx + len..];
    }
    out.push_str(rest);
    out
}

/// Fill a template for a pair. Forward puts `pair.0` in the A slot.
pub fn instantiate(
    template: &ScenarioTemplate,
    pair: (&Country, &Country),
    ordering: Ordering,
    language: Language,
) -> Result<String, BankError> {
    let (a, b) = match ordering {
        Ordering::Forward => (pair.0, pair.1),
        Ordering::Reverse => (pair.1, pair.0),
    };
    fn name(c: &Country, language: Language) -> Result<&str, BankError> {
        c.display_name
            .get(language)
            .ok_or_else(|| BankError::MissingDisplayName {
                country: c.code.clone(),
                language,
            })
    }
    let (name_a, name_b) = (name(a, language)?, name(b, language)?);
    let text = template
        .narrative
        .get(language)
        .ok_or_else(|| BankError::MissingText {
            record: format!("scenario {}", template.id),
            language,
        })?;
    Ok(substitute(text, name_a, name_b))
}

/// A validated scenario bank. Immutable once loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    pub bank_version: u32,
    #[serde(default = "default_languages")]
    pub languages: Vec<Language>,
    pub countries: Vec<Country>,
    pub scenarios: Vec<ScenarioTemplate>,
    pub questions: Vec<Question>,
    #[serde(default)]
    pub instructions: Instructions,
}

impl Bank {
    /// Check every record invariant. The first violation is returned.
    pub fn validate(&self) -> Result<(), BankError> {
        if self.bank_version != BANK_VERSION {
            return Err(violation(
                "bank",
                format!("unsupported bank_version {}", self.bank_version),
            ));
        }
        if self.languages.is_empty() {
            return Err(violation("bank", "no languages declared"));
        }
        let mut codes = BTreeSet::new();
        for c in &self.countries {
            let record = format!("country {}", c.code);
            if c.code.is_empty() {
                return Err(violation(record, "empty country code"));
            }
            if !codes.insert(c.code.as_str()) {
                return Err(violation(record, "duplicate country code"));
            }
            for &lang in &self.languages {
                if c.display_name.get(lang).map_or(true, str::is_empty) {
                    return Err(violation(record, format!("missing {lang} display name")));
                }
            }
            if c.phonetic_identity != PhoneticIdentity::None && c.bloc != Bloc::Fictional {
                return Err(violation(
                    record,
                    "phonetic_identity is only allowed on fictional countries",
                ));
            }
        }
        let mut ids = BTreeSet::new();
        for s in &self.scenarios {
            let record = format!("scenario {}", s.id);
            if !ids.insert(s.id.as_str()) {
                return Err(violation(record, "duplicate scenario id"));
            }
            if s.heat != s.scenario_type.expected_heat() {
                return Err(violation(
                    record,
                    format!(
                        "type {} requires heat {:?}, found {:?}",
                        s.scenario_type.name(),
                        s.scenario_type.expected_heat(),
                        s.heat
                    ),
                ));
            }
            for &lang in &self.languages {
                let text = s.narrative.get(lang).ok_or_else(|| {
                    violation(record.clone(), format!("missing {lang} narrative"))
                })?;
                for ph in [PLACEHOLDER_A, PLACEHOLDER_B] {
                    if !text.contains(ph) {
                        return Err(violation(
                            record,
                            format!("{lang} narrative lacks {ph}"),
                        ));
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            let record = format!("question {:?}/{:?}", q.polarity, q.phrasing_id);
            if !seen.insert((q.polarity, q.phrasing_id)) {
                return Err(violation(record, "duplicate polarity/phrasing"));
            }
            for &lang in &self.languages {
                if q.text.get(lang).map_or(true, str::is_empty) {
                    return Err(violation(record, format!("missing {lang} text")));
                }
            }
        }
        for polarity in [Polarity::Justified, Polarity::Unjustified] {
            if !seen.contains(&(polarity, PhrasingId::Default)) {
                return Err(violation(
                    "questions",
                    format!("no default phrasing for {polarity:?}"),
                ));
            }
        }
        for (name, text) in [
            ("hedge", &self.instructions.hedge),
            ("answer_cue", &self.instructions.answer_cue),
            ("freegen", &self.instructions.freegen),
        ] {
            for &lang in &self.languages {
                if text.get(lang).map_or(true, str::is_empty) {
                    return Err(violation(
                        format!("instructions.{name}"),
                        format!("missing {lang} text"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn country(&self, code: &str) -> Result<&Country, BankError> {
        self.countries
            .iter()
            .find(|c| c.code == code)
            .ok_or_else(|| BankError::UnknownCountry(code.to_string()))
    }

    pub fn scenario(&self, id: &str) -> Result<&ScenarioTemplate, BankError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| BankError::UnknownScenario(id.to_string()))
    }

    pub fn question(&self, polarity: Polarity, phrasing: PhrasingId) -> Result<&Question, BankError> {
        self.questions
            .iter()
            .find(|q| q.polarity == polarity && q.phrasing_id == phrasing)
            .ok_or(BankError::MissingQuestion { polarity, phrasing })
    }

    pub fn real_countries(&self) -> impl Iterator<Item = &Country> {
        self.countries.iter().filter(|c| !c.is_fictional())
    }

    pub fn fictional_countries(&self) -> impl Iterator<Item = &Country> {
        self.countries.iter().filter(|c| c.is_fictional())
    }

    pub fn real_pairs(&self) -> Vec<CountryPair> {
        enumerate_pairs(self.real_countries())
    }

    pub fn fictional_pairs(&self) -> Vec<CountryPair> {
        enumerate_pairs(self.fictional_countries())
    }

    pub fn display_name(&self, code: &str, language: Language) -> Result<&str, BankError> {
        self.country(code)?
            .display_name
            .get(language)
            .ok_or_else(|| BankError::MissingDisplayName {
                country: code.to_string(),
                language,
            })
    }

    /// Instantiate a scenario by id for a pair of codes.
    pub fn narrative(
        &self,
        scenario_id: &str,
        pair: &CountryPair,
        ordering: Ordering,
        language: Language,
    ) -> Result<String, BankError> {
        let template = self.scenario(scenario_id)?;
        let first = self.country(&pair.0)?;
        let second = self.country(&pair.1)?;
        instantiate(template, (first, second), ordering, language)
    }

    /// Phrasing ids that exist for both polarities.
    pub fn paired_phrasings(&self) -> Vec<PhrasingId> {
        let j: BTreeSet<_> = self
            .questions
            .iter()
            .filter(|q| q.polarity == Polarity::Justified)
            .map(|q| q.phrasing_id)
            .collect();
        self.questions
            .iter()
            .filter(|q| q.polarity == Polarity::Unjustified && j.contains(&q.phrasing_id))
            .map(|q| q.phrasing_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    pub fn country(code: &str, en: &str, bloc: Bloc) -> Country {
        Country {
            code: code.into(),
            display_name: Localized::from_pairs([
                (Language::En, en),
                (Language::Fr, en),
                (Language::Zh, en),
            ]),
            bloc,
            phonetic_identity: PhoneticIdentity::None,
        }
    }

    pub const AIRSPACE: &str = "A [COUNTRY_A] military aircraft entered [COUNTRY_B]'s airspace. [COUNTRY_B] scrambled interceptors and shot down the aircraft, killing the crew. [COUNTRY_A] claims navigation error. [COUNTRY_B] says the incursion was deliberate.";

    pub fn template(id: &str, ty: ScenarioType, text: &str) -> ScenarioTemplate {
        ScenarioTemplate {
            id: id.into(),
            scenario_type: ty,
            role_variant: RoleVariant::AggressorAsA,
            heat: ty.expected_heat(),
            narrative: Localized::from_pairs([
                (Language::En, text),
                (Language::Fr, text),
                (Language::Zh, text),
            ]),
        }
    }

    pub fn question(polarity: Polarity, phrasing: PhrasingId, text: &str) -> Question {
        Question {
            polarity,
            phrasing_id: phrasing,
            text: Localized::from_pairs([
                (Language::En, text),
                (Language::Fr, text),
                (Language::Zh, text),
            ]),
        }
    }

    pub fn small_bank() -> Bank {
        Bank {
            bank_version: 1,
            languages: Language::ALL.to_vec(),
            countries: vec![
                country("US", "USA", Bloc::Western),
                country("CN", "China", Bloc::Chinese),
                country("JP", "Japan", Bloc::Western),
                country("ID", "Indonesia", Bloc::GlobalSouth),
            ],
            scenarios: vec![
                template("airspace_01", ScenarioType::Airspace, AIRSPACE),
                template(
                    "sovereignty_01",
                    ScenarioType::Sovereignty,
                    "[COUNTRY_A] declared an island chain part of its territory. [COUNTRY_B] rejects the claim.",
                ),
            ],
            questions: vec![
                question(
                    Polarity::Justified,
                    PhrasingId::Default,
                    "Which country acted more justifiably?",
                ),
                question(
                    Polarity::Unjustified,
                    PhrasingId::Default,
                    "Which country acted less justifiably?",
                ),
            ],
            instructions: Instructions::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::vec;

    #[test]
    fn small_bank_validates() {
        small_bank().validate().unwrap();
    }

    #[test]
    fn missing_country_b_placeholder_is_rejected() {
        let mut bank = small_bank();
        bank.scenarios[0].narrative.0.insert(
            Language::Fr,
            "[COUNTRY_A] a violé l'espace aérien.".into(),
        );
        let err = bank.validate().unwrap_err();
        match err {
            BankError::Invariant { record, rule } => {
                assert_eq!(record, "scenario airspace_01");
                assert!(rule.contains("[COUNTRY_B]"), "{rule}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hot_type_marked_cold_is_rejected() {
        let mut bank = small_bank();
        bank.scenarios[1].heat = Heat::Cold;
        let err = bank.validate().unwrap_err();
        assert!(err.to_string().contains("sovereignty"), "{err}");
    }

    #[test]
    fn heat_matches_type_list() {
        let hot: Vec<_> = ScenarioType::ALL.iter().filter(|t| t.is_hot()).collect();
        assert_eq!(
            hot,
            vec![
                &ScenarioType::Nuclear,
                &ScenarioType::Sovereignty,
                &ScenarioType::TechWar,
                &ScenarioType::InternalAffairs
            ]
        );
    }

    #[test]
    fn phonetic_identity_requires_fictional_bloc() {
        let mut bank = small_bank();
        bank.countries[0].phonetic_identity = PhoneticIdentity::Anglo;
        assert!(bank.validate().is_err());
        bank.countries[0].bloc = Bloc::Fictional;
        bank.validate().unwrap();
    }

    #[test]
    fn duplicate_codes_and_missing_names_rejected() {
        let mut bank = small_bank();
        bank.countries.push(country("US", "America", Bloc::Western));
        assert!(bank.validate().is_err());

        let mut bank = small_bank();
        bank.countries[1].display_name.0.remove(&Language::Zh);
        assert!(bank.validate().unwrap_err().to_string().contains("ZH"));
    }

    #[test]
    fn missing_default_question_rejected() {
        let mut bank = small_bank();
        bank.questions[1].phrasing_id = PhrasingId::Alt1;
        assert!(bank.validate().is_err());
    }

    #[test]
    fn instantiate_forward_and_reverse() {
        let bank = small_bank();
        let t = &bank.scenarios[0];
        let us = bank.country("US").unwrap();
        let cn = bank.country("CN").unwrap();
        let fwd = instantiate(t, (us, cn), Ordering::Forward, Language::En).unwrap();
        assert!(fwd.starts_with("A USA military aircraft entered China's airspace."));
        let rev = instantiate(t, (us, cn), Ordering::Reverse, Language::En).unwrap();
        assert!(rev.starts_with("A China military aircraft entered USA's airspace."));
        assert!(!fwd.contains("[COUNTRY"));
        assert_eq!(
            rev,
            instantiate(t, (cn, us), Ordering::Forward, Language::En).unwrap()
        );
    }

    #[test]
    fn instantiate_does_not_rescan_names() {
        let t = template("x", ScenarioType::Trade, "[COUNTRY_A] vs [COUNTRY_B]");
        let a = country("AA", "[COUNTRY_B]", Bloc::Western);
        let b = country("BB", "Beta", Bloc::Western);
        let s = instantiate(&t, (&a, &b), Ordering::Forward, Language::En).unwrap();
        assert_eq!(s, "[COUNTRY_B] vs Beta");
    }

    #[test]
    fn instantiate_missing_display_name() {
        let t = template("x", ScenarioType::Trade, "[COUNTRY_A] vs [COUNTRY_B]");
        let mut a = country("AA", "Alpha", Bloc::Western);
        a.display_name.0.remove(&Language::Zh);
        let b = country("BB", "Beta", Bloc::Western);
        let err = instantiate(&t, (&a, &b), Ordering::Forward, Language::Zh).unwrap_err();
        assert!(matches!(err, BankError::MissingDisplayName { .. }));
    }

    #[test]
    fn pair_counts() {
        let two = [
            country("B", "B", Bloc::Western),
            country("A", "A", Bloc::Western),
        ];
        assert_eq!(enumerate_pairs(&two), vec![CountryPair::new("A", "B")]);
        let eight: Vec<_> = (0..8)
            .map(|i| country(&alloc::format!("C{i}"), "x", Bloc::Fictional))
            .collect();
        let pairs = enumerate_pairs(&eight);
        // brute-force count of distinct unordered pairs
        let mut brute = 0;
        for i in 0..8 {
            for j in 0..8 {
                if i < j {
                    brute += 1;
                }
            }
        }
        assert_eq!(pairs.len(), brute);
        assert_eq!(brute, 28);
    }

    #[test]
    fn pair_slots_follow_ordering() {
        let p = CountryPair::new("US", "CN");
        assert_eq!(p.slots(Ordering::Forward), ("CN", "US"));
        assert_eq!(p.slots(Ordering::Reverse), ("US", "CN"));
        assert_eq!(p.opponent_of("CN"), Some("US"));
        assert_eq!(p.opponent_of("JP"), None);
    }
}
