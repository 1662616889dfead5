//! HTTP client for the provider wire protocol.

use std::time::Duration;

use geoprobe_core::provider::{DistributionProvider, GenerationResult, ModelInfo, ProviderError, TokenDistribution};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::wire::{
    DistributionRequest, ErrorBody, GenerateRequest, GenerateResponse, WireDistribution, DEFAULT_TOP_K,
    DISTRIBUTION_PATH, GENERATE_PATH, INFO_PATH,
};

/// Bearer token for the provider, read from the environment only.
pub const TOKEN_ENV: &str = "GEOPROBE_API_TOKEN";

#[derive(Clone, Debug)]
pub struct HttpProvider {
    base_url: String,
    token: Option<String>,
    top_k: usize,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            top_k: DEFAULT_TOP_K,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn finish<T: DeserializeOwned>(
        &self,
        sent: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ProviderError> {
        let mut resp = sent.map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorBody>(&body).map(|e| e.error).unwrap_or(body);
            return Err(match status {
                408 | 429 | 500..=599 => ProviderError::Transport(format!("HTTP {status}: {message}")),
                _ => ProviderError::InvalidRequest(format!("HTTP {status}: {message}")),
            });
        }
        serde_json::from_str(&body).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ProviderError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(req.send_json(body))
    }
}

fn transport(e: ureq::Error) -> ProviderError {
    ProviderError::Transport(e.to_string())
}

impl DistributionProvider for HttpProvider {
    fn info(&self) -> Result<ModelInfo, ProviderError> {
        let mut req = self.agent.get(self.url(INFO_PATH));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(req.call())
    }

    fn next_token_distribution(&self, prompt: &str, requested: &[String]) -> Result<TokenDistribution, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        let w: WireDistribution = self.post(
            DISTRIBUTION_PATH,
            &DistributionRequest {
                prompt: prompt.to_string(),
                tokens: requested.to_vec(),
                top_k: self.top_k,
            },
        )?;
        w.into_distribution()
    }

    /// Stop tokens are applied client-side: the wire protocol always decodes
    /// to `max_tokens` or end of sequence.
    fn generate_greedy(&self, prompt: &str, max_tokens: usize, stop: &[String]) -> Result<GenerationResult, ProviderError> {
        if max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be ≥ 1".into()));
        }
        let r: GenerateResponse = self.post(
            GENERATE_PATH,
            &GenerateRequest {
                prompt: prompt.to_string(),
                max_tokens,
                greedy: true,
            },
        )?;
        let mut g = r.into_result()?;
        if g.tokens.len() > max_tokens {
            return Err(ProviderError::InvalidResponse(format!(
                "{} tokens exceed the budget of {max_tokens}",
                g.tokens.len()
            )));
        }
        if let Some(i) = g.tokens.iter().position(|t| stop.contains(t)) {
            g = GenerationResult::new(g.tokens[..=i].to_vec(), g.distributions[..=i].to_vec())
                .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        }
        Ok(g)
    }
}
