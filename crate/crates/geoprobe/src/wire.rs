//! JSON bodies of the provider wire protocol, and a transport-free request
//! handler that serves any [`DistributionProvider`] over it.
//!
//! ```text
//! POST /v1/distribution {prompt, tokens, top_k}        -> {entries, remainder}
//! POST /v1/generate     {prompt, max_tokens, greedy}   -> {text, tokens, distributions}
//! GET  /v1/info                                        -> {model_id, tokenizer_mode}
//! ```
//!
//! A requested token the model does not know is reported as `null`
//! (log-probability `-∞`).

use std::collections::BTreeMap;

use geoprobe_core::provider::{DistributionProvider, GenerationResult, ModelInfo, ProviderError, TokenDistribution};
use serde::{Deserialize, Serialize};

pub const DISTRIBUTION_PATH: &str = "/v1/distribution";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const INFO_PATH: &str = "/v1/info";

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRequest {
    pub prompt: String,
    pub tokens: Vec<String>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDistribution {
    pub entries: BTreeMap<String, Option<f64>>,
    pub remainder: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub greedy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub tokens: Vec<String>,
    pub distributions: Vec<WireDistribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl WireDistribution {
    pub fn into_distribution(self) -> Result<TokenDistribution, ProviderError> {
        let entries = self
            .entries
            .into_iter()
            .map(|(t, lp)| (t, lp.unwrap_or(f64::NEG_INFINITY)))
            .collect();
        TokenDistribution::new(entries, self.remainder).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }

    /// Requested tokens plus the `top_k` most probable; everything else is
    /// folded into the remainder.
    pub fn truncated(dist: &TokenDistribution, requested: &[String], top_k: usize) -> Self {
        let mut ranked: Vec<(&String, f64)> = dist.entries().iter().map(|(t, &lp)| (t, lp)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut entries: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for (t, lp) in ranked.iter().take(top_k) {
            entries.insert((*t).clone(), Some(*lp));
        }
        for t in requested {
            let lp = dist.logprob(t);
            entries.insert(t.clone(), lp.is_finite().then_some(lp));
        }
        let kept: f64 = entries.values().flatten().map(|lp| lp.exp()).sum();
        let listed: f64 = dist.entries().values().map(|lp| lp.exp()).sum();
        WireDistribution {
            entries,
            remainder: (dist.remainder() + (listed - kept)).max(0.0),
        }
    }

    pub fn full(dist: &TokenDistribution) -> Self {
        WireDistribution {
            entries: dist.entries().iter().map(|(t, &lp)| (t.clone(), Some(lp))).collect(),
            remainder: dist.remainder(),
        }
    }
}

impl GenerateResponse {
    pub fn from_result(g: &GenerationResult) -> Self {
        GenerateResponse {
            text: g.text.clone(),
            tokens: g.tokens.clone(),
            distributions: g.distributions.iter().map(WireDistribution::full).collect(),
        }
    }

    /// Validate alignment, text concatenation and the greedy invariant.
    pub fn into_result(self) -> Result<GenerationResult, ProviderError> {
        let dists = self
            .distributions
            .into_iter()
            .map(WireDistribution::into_distribution)
            .collect::<Result<Vec<_>, _>>()?;
        for (i, (tok, d)) in self.tokens.iter().zip(&dists).enumerate() {
            let best = d.argmax().map(|(_, lp)| lp).unwrap_or(f64::NEG_INFINITY);
            if d.logprob(tok) < best - 1e-9 {
                return Err(ProviderError::InvalidResponse(format!(
                    "token {i} ({tok:?}) is not the argmax of its distribution"
                )));
            }
        }
        let g = GenerationResult::new(self.tokens, dists).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        if g.text != self.text {
            return Err(ProviderError::InvalidResponse("text is not the concatenation of tokens".into()));
        }
        Ok(g)
    }
}

/// Outcome of [`handle`]: an HTTP status and a JSON body.
#[derive(Clone, Debug, PartialEq)]
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

fn json<T: Serialize>(status: u16, v: &T) -> WireResponse {
    WireResponse {
        status,
        body: serde_json::to_string(v).expect("wire bodies serialize"),
    }
}

fn error(status: u16, message: impl Into<String>) -> WireResponse {
    json(status, &ErrorBody { error: message.into() })
}

fn provider_error(e: ProviderError) -> WireResponse {
    match e {
        ProviderError::InvalidRequest(m) => error(400, m),
        ProviderError::Transport(m) => error(503, m),
        other => error(500, other.to_string()),
    }
}

/// Serve one wire-protocol request from `provider`.
pub fn handle(provider: &dyn DistributionProvider, method: &str, path: &str, body: &str) -> WireResponse {
    match (method, path) {
        ("GET", INFO_PATH) => match provider.info() {
            Ok(info) => json(200, &info),
            Err(e) => provider_error(e),
        },
        ("POST", DISTRIBUTION_PATH) => {
            let req: DistributionRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, e.to_string()),
            };
            if req.prompt.is_empty() {
                return error(400, "prompt must be non-empty");
            }
            match provider.next_token_distribution(&req.prompt, &req.tokens) {
                Ok(d) => json(200, &WireDistribution::truncated(&d, &req.tokens, req.top_k)),
                Err(e) => provider_error(e),
            }
        }
        ("POST", GENERATE_PATH) => {
            let req: GenerateRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, e.to_string()),
            };
            if !req.greedy {
                return error(400, "only greedy decoding is supported");
            }
            if req.max_tokens == 0 {
                return error(400, "max_tokens must be at least 1");
            }
            match provider.generate_greedy(&req.prompt, req.max_tokens, &[]) {
                Ok(g) => json(200, &GenerateResponse::from_result(&g)),
                Err(e) => provider_error(e),
            }
        }
        (_, INFO_PATH | DISTRIBUTION_PATH | GENERATE_PATH) => error(405, "method not allowed"),
        _ => error(404, format!("no route for {path}")),
    }
}

pub fn info_from_json(body: &str) -> Result<ModelInfo, ProviderError> {
    serde_json::from_str(body).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist() -> TokenDistribution {
        let mut e = BTreeMap::new();
        e.insert("A".to_string(), 0.5f64.ln());
        e.insert("B".to_string(), 0.3f64.ln());
        e.insert("\n".to_string(), 0.2f64.ln());
        TokenDistribution::new(e, 0.0).unwrap()
    }

    #[test]
    fn truncation_keeps_requested_and_reports_unknown_as_null() {
        let w = WireDistribution::truncated(&dist(), &["B".into(), " B".into()], 1);
        assert_eq!(w.entries.len(), 3);
        assert_eq!(w.entries["A"], Some(0.5f64.ln()));
        assert_eq!(w.entries[" B"], None);
        assert!((w.remainder - 0.2).abs() < 1e-12);
        let back = w.into_distribution().unwrap();
        assert_eq!(back.logprob(" B"), f64::NEG_INFINITY);
        assert_eq!(back.logprob("B"), 0.3f64.ln());
    }

    #[test]
    fn null_serializes_and_floats_round_trip() {
        let lp = 0.1f64.ln();
        let w = WireDistribution {
            entries: [("A".to_string(), Some(lp)), ("Z".to_string(), None)].into_iter().collect(),
            remainder: 0.9,
        };
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"Z\":null"));
        let back: WireDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back.entries["A"].unwrap().to_bits(), lp.to_bits());
    }

    #[test]
    fn non_argmax_generation_is_rejected() {
        let r = GenerateResponse {
            text: "B".into(),
            tokens: vec!["B".into()],
            distributions: vec![WireDistribution::full(&dist())],
        };
        assert!(r.into_result().is_err());
    }
}
