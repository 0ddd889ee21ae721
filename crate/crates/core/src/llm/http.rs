//! OpenAI-compatible chat-completions provider over blocking HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FinishReason, LlmRequest, LlmResponse, Provider, ProviderError, Usage};

pub const ENV_API_KEY: &str = "T2S_API_KEY";
pub const ENV_BASE_URL: &str = "T2S_BASE_URL";
pub const ENV_MODEL: &str = "T2S_MODEL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpConfig {
    /// Reads base URL, model and key from the environment; `base` supplies
    /// fallbacks from a config file.
    pub fn from_env(base: Option<&HttpConfig>) -> Option<Self> {
        let base_url = std::env::var(ENV_BASE_URL)
            .ok()
            .or_else(|| base.map(|b| b.base_url.clone()))
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        let model = std::env::var(ENV_MODEL).ok().or_else(|| base.map(|b| b.model.clone()))?;
        Some(Self {
            base_url,
            model,
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout_secs: base.map(|b| b.timeout_secs).unwrap_or_else(default_timeout_secs),
        })
    }
}

pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }
}

impl Provider for HttpProvider {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.rendered_prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut builder = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = builder.send_json(&body).map_err(|e| ProviderError::transient(None, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::transient(Some(status), e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::transient(Some(status), text));
        }
        if status >= 400 {
            return Err(ProviderError::fatal(Some(status), text));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ProviderError::fatal(Some(status), e.to_string()))?;
        let choice = &v["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::fatal(Some(status), "response has no message content".into()))?;
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("content_filter") => FinishReason::Filtered,
            _ => FinishReason::Complete,
        };
        Ok(LlmResponse {
            text: content.to_string(),
            finish_reason,
            usage: Usage {
                prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            },
        })
    }
}
