//! The provider abstraction: the only way the harness talks to a model.
//!
//! Tokens that a provider does not report are treated as having
//! log-probability `-∞`; absent entries are never an error.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::TokenizerMode;

/// Allowed deviation of `Σ p + remainder` from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("log-probability for {0:?} is NaN or +inf")]
    BadLogprob(String),
    #[error("negative truncation remainder {0}")]
    NegativeRemainder(f64),
    #[error("probability mass sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("{tokens} tokens but {distributions} distributions")]
    Misaligned { tokens: usize, distributions: usize },
}

/// Next-token distribution: explicit entries plus unenumerated remainder mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: BTreeMap<String, f64>,
    remainder: f64,
}

impl TokenDistribution {
    /// Entries at `-∞` are dropped.
    pub fn new(entries: BTreeMap<String, f64>, remainder: f64) -> Result<Self, DistributionError> {
        let mut kept = BTreeMap::new();
        for (tok, lp) in entries {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(DistributionError::BadLogprob(tok));
            }
            if lp > f64::NEG_INFINITY {
                kept.insert(tok, lp);
            }
        }
        if remainder.is_nan() || remainder < 0.0 {
            return Err(DistributionError::NegativeRemainder(remainder));
        }
        let total: f64 = kept.values().map(|&lp| exp(lp)).sum::<f64>() + remainder;
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistributionError::NotNormalized(total));
        }
        Ok(TokenDistribution {
            entries: kept,
            remainder,
        })
    }

    /// Build from log-probabilities; the remainder is whatever mass is left.
    pub fn from_logprobs(entries: BTreeMap<String, f64>) -> Result<Self, DistributionError> {
        let total: f64 = entries
            .values()
            .filter(|lp| lp.is_finite())
            .map(|&lp| exp(lp))
            .sum();
        let remainder = if total < 1.0 { 1.0 - total } else { 0.0 };
        Self::new(entries, remainder)
    }

    /// A point mass on one token.
    pub fn certain(token: &str) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(token.to_string(), 0.0);
        TokenDistribution {
            entries,
            remainder: 0.0,
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    /// Log-probability of a token, `-∞` when absent.
    pub fn logprob(&self, token: &str) -> f64 {
        self.entries.get(token).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn prob(&self, token: &str) -> f64 {
        exp(self.logprob(token))
    }

    /// Highest-probability token; ties go to the lexicographically smallest.
    pub fn argmax(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (tok, &lp) in &self.entries {
            match best {
                Some((_, b)) if lp <= b => {}
                _ => best = Some((tok.as_str(), lp)),
            }
        }
        best
    }

    /// Keep only the named tokens, moving everything else into the remainder.
    pub fn restricted_to(&self, tokens: &[String]) -> Self {
        let entries: BTreeMap<String, f64> = self
            .entries
            .iter()
            .filter(|(t, _)| tokens.contains(t))
            .map(|(t, &lp)| (t.clone(), lp))
            .collect();
        let kept: f64 = entries.values().map(|&lp| exp(lp)).sum();
        let all: f64 = self.entries.values().map(|&lp| exp(lp)).sum();
        TokenDistribution {
            entries,
            remainder: (self.remainder + (all - kept)).max(0.0),
        }
    }
}

/// Greedy generation with the distribution each token was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub tokens: Vec<String>,
    pub distributions: Vec<TokenDistribution>,
}

impl GenerationResult {
    pub fn new(
        tokens: Vec<String>,
        distributions: Vec<TokenDistribution>,
    ) -> Result<Self, DistributionError> {
        if tokens.len() != distributions.len() {
            return Err(DistributionError::Misaligned {
                tokens: tokens.len(),
                distributions: distributions.len(),
            });
        }
        Ok(GenerationResult {
            text: tokens.concat(),
            tokens,
            distributions,
        })
    }

    /// Byte offset at which each token starts in `text`.
    pub fn token_offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.tokens
            .iter()
            .map(|t| {
                let start = at;
                at += t.len();
                start
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub tokenizer_mode: TokenizerMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl ProviderError {
    /// Transport failures may be retried; everything else is deterministic.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// A stateless model endpoint.
pub trait DistributionProvider: Send + Sync {
    fn info(&self) -> Result<ModelInfo, ProviderError>;

    /// Next-token distribution at the end of `prompt`. Every requested token
    /// known to the model is reported; more may be included.
    fn next_token_distribution(
        &self,
        prompt: &str,
        requested: &[String],
    ) -> Result<TokenDistribution, ProviderError>;

    /// Greedy decoding. The default runs the model autoregressively through
    /// [`next_token_distribution`](Self::next_token_distribution), which only
    /// works for providers that report their full distribution. Generation
    /// halts after `max_tokens` or right after emitting a `stop` token.
    fn generate_greedy(
        &self,
        prompt: &str,
        max_tokens: usize,
        stop: &[String],
    ) -> Result<GenerationResult, ProviderError> {
        if max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be ≥ 1".into()));
        }
        let mut context = String::from(prompt);
        let mut tokens = Vec::new();
        let mut dists = Vec::new();
        for _ in 0..max_tokens {
            let dist = self.next_token_distribution(&context, &[])?;
            let token = dist
                .argmax()
                .map(|(t, _)| t.to_string())
                .ok_or_else(|| ProviderError::InvalidResponse("empty distribution".into()))?;
            context.push_str(&token);
            let done = stop.contains(&token);
            tokens.push(token);
            dists.push(dist);
            if done {
                break;
            }
        }
        Ok(GenerationResult::new(tokens, dists)?)
    }
}

impl<P: DistributionProvider + ?Sized> DistributionProvider for alloc::boxed::Box<P> {
    fn info(&self) -> Result<ModelInfo, ProviderError> {
        (**self).info()
    }
    fn next_token_distribution(
        &self,
        prompt: &str,
        requested: &[String],
    ) -> Result<TokenDistribution, ProviderError> {
        (**self).next_token_distribution(prompt, requested)
    }
    fn generate_greedy(
        &self,
        prompt: &str,
        max_tokens: usize,
        stop: &[String],
    ) -> Result<GenerationResult, ProviderError> {
        (**self).generate_greedy(prompt, max_tokens, stop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use libm::log;

    fn dist(pairs: &[(&str, f64)]) -> TokenDistribution {
        TokenDistribution::from_logprobs(pairs.iter().map(|(t, p)| (t.to_string(), log(*p))).collect())
            .unwrap()
    }

    #[test]
    fn normalization_is_enforced() {
        let mut e = BTreeMap::new();
        e.insert("A".to_string(), log(0.5));
        assert!(TokenDistribution::new(e.clone(), 0.5).is_ok());
        assert!(matches!(
            TokenDistribution::new(e.clone(), 0.4),
            Err(DistributionError::NotNormalized(_))
        ));
        assert!(TokenDistribution::new(e, -0.1).is_err());
    }

    #[test]
    fn neg_inf_entries_are_absent() {
        let mut e = BTreeMap::new();
        e.insert("A".to_string(), 0.0);
        e.insert("B".to_string(), f64::NEG_INFINITY);
        let d = TokenDistribution::new(e, 0.0).unwrap();
        assert_eq!(d.entries().len(), 1);
        assert_eq!(d.logprob("B"), f64::NEG_INFINITY);
        assert_eq!(d.logprob("zzz"), f64::NEG_INFINITY);
    }

    #[test]
    fn argmax_breaks_ties_lexicographically() {
        let d = dist(&[("B", 0.5), ("A", 0.5)]);
        assert_eq!(d.argmax().unwrap().0, "A");
    }

    #[test]
    fn restriction_moves_mass_to_remainder() {
        let d = dist(&[("A", 0.2), ("B", 0.3), ("\n", 0.5)]);
        let r = d.restricted_to(&vec!["A".to_string()]);
        assert_eq!(r.entries().len(), 1);
        assert!((r.remainder() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn generation_alignment_checked() {
        let err = GenerationResult::new(vec!["a".into()], vec![]).unwrap_err();
        assert!(matches!(err, DistributionError::Misaligned { .. }));
        let g = GenerationResult::new(
            vec!["ab".into(), " c".into()],
            vec![TokenDistribution::certain("ab"), TokenDistribution::certain(" c")],
        )
        .unwrap();
        assert_eq!(g.text, "ab c");
        assert_eq!(g.token_offsets(), vec![0, 2]);
    }
}
