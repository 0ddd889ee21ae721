//! Provider-agnostic LLM access with templating, output parsing, rate limiting and record/replay.

pub mod http;
pub mod parse;
pub mod replay;
pub mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{format_tagged, parse_json_object, parse_string_list, parse_tagged, JsonKind, Tagged};
pub use replay::{replay_key, request_digest, ReplayEntry, ReplayStore};
pub use template::{render_prompt, render_text};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("missing binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for key {0}...")]
    ReplayMiss(String),
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("rate limited after {0} attempt(s)")]
    RateLimited(u32),
    #[error("no provider configured")]
    NoProvider,
    #[error("replay store: {0}")]
    Store(String),
    #[error("response has no <answer> section")]
    MissingAnswer,
    #[error("response contains no JSON value of the expected shape")]
    NoJson,
    #[error("JSON response lacks key `{0}`")]
    MissingKey(String),
    #[error("JSON key `{key}` should be a {expected}")]
    WrongType { key: String, expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    GenerateSql,
    SqlToText,
    Judge,
    Repair,
    Reasoning,
    Keywords,
    ColumnFilter,
    TranslateCandidates,
}

impl Purpose {
    pub fn default_temperature(self) -> f64 {
        match self {
            Purpose::Judge | Purpose::ColumnFilter => 0.0,
            _ => 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub template_id: String,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub purpose_tag: Purpose,
}

impl LlmRequest {
    /// Renders `template_id` with `bindings` at the purpose's default temperature.
    pub fn from_template(
        template_id: &str,
        bindings: &std::collections::BTreeMap<String, String>,
        purpose: Purpose,
    ) -> Result<Self, LlmError> {
        Ok(Self {
            template_id: template_id.to_string(),
            rendered_prompt: render_prompt(template_id, bindings)?,
            temperature: purpose.default_temperature(),
            max_tokens: 2048,
            purpose_tag: purpose,
        })
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.rendered_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    pub fn key(&self) -> String {
        replay_key(&self.template_id, &self.rendered_prompt, self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Length,
    Filtered,
    Replayed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub status: Option<u16>,
    pub retryable: bool,
    pub message: String,
}

impl ProviderError {
    pub fn transient(status: Option<u16>, message: String) -> Self {
        Self { status, retryable: true, message }
    }

    pub fn fatal(status: Option<u16>, message: String) -> Self {
        Self { status, retryable: false, message }
    }
}

/// A model backend. Implementations must be safe for concurrent use.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call the provider directly.
    Live,
    /// Serve recorded responses; call the provider and record on a miss.
    Record,
    /// Serve recorded responses only; a miss is an error.
    Replay,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Concurrency cap plus an optional token bucket on request starts.
pub struct RateLimiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    per_second: Option<f64>,
    bucket: Mutex<(f64, Instant)>,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.limiter.released.notify_one();
    }
}

impl RateLimiter {
    pub fn new(max_in_flight: usize, per_second: Option<f64>) -> Self {
        let burst = per_second.unwrap_or(0.0).max(1.0);
        Self {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            per_second,
            bucket: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max_in_flight {
            n = self.released.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        drop(n);
        if let Some(rate) = self.per_second {
            loop {
                let mut b = self.bucket.lock().expect("limiter poisoned");
                let now = Instant::now();
                let burst = rate.max(1.0);
                b.0 = (b.0 + now.duration_since(b.1).as_secs_f64() * rate).min(burst);
                b.1 = now;
                if b.0 >= 1.0 {
                    b.0 -= 1.0;
                    break;
                }
                let wait = Duration::from_secs_f64((1.0 - b.0) / rate);
                drop(b);
                std::thread::sleep(wait);
            }
        }
        Permit { limiter: self }
    }
}

/// Entry point for every model call in the pipeline.
pub struct Gateway {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    store: Arc<ReplayStore>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    retries: AtomicU64,
    calls: AtomicU64,
}

impl Gateway {
    pub fn replay(store: Arc<ReplayStore>) -> Self {
        Self::new(Mode::Replay, None, store)
    }

    pub fn live(provider: Arc<dyn Provider>) -> Self {
        Self::new(Mode::Live, Some(provider), Arc::new(ReplayStore::new()))
    }

    pub fn record(provider: Arc<dyn Provider>, store: Arc<ReplayStore>) -> Self {
        Self::new(Mode::Record, Some(provider), store)
    }

    pub fn new(mode: Mode, provider: Option<Arc<dyn Provider>>, store: Arc<ReplayStore>) -> Self {
        Self {
            mode,
            provider,
            store,
            limiter: RateLimiter::new(4, None),
            retry: RetryPolicy::default(),
            retries: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_limits(mut self, max_in_flight: usize, per_second: Option<f64>) -> Self {
        self.limiter = RateLimiter::new(max_in_flight, per_second);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &Arc<ReplayStore> {
        &self.store
    }

    /// Number of retried provider calls so far.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn provider_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        let key = req.key();
        if matches!(self.mode, Mode::Replay | Mode::Record) {
            if let Some(text) = self.store.next(&key) {
                return Ok(LlmResponse { text, finish_reason: FinishReason::Replayed, usage: Usage::default() });
            }
            if self.mode == Mode::Replay {
                return Err(LlmError::ReplayMiss(key[..12].to_string()));
            }
        }
        let response = self.call_provider(req)?;
        if self.mode == Mode::Record {
            self.store.record(&key, &request_digest(req), &response.text);
        }
        Ok(response)
    }

    fn call_provider(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let provider = self.provider.as_ref().ok_or(LlmError::NoProvider)?;
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            let result = {
                let _permit = self.limiter.acquire();
                self.calls.fetch_add(1, Ordering::Relaxed);
                provider.complete(req)
            };
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable && attempt < attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    tracing::warn!(attempt, status = ?e.status, ?delay, "provider call failed, retrying");
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(delay);
                    last = Some(e);
                }
                Err(e) => {
                    last = Some(e);
                    break;
                }
            }
        }
        let e = last.expect("at least one attempt");
        if e.status == Some(429) {
            Err(LlmError::RateLimited(attempts))
        } else {
            Err(LlmError::Provider { attempts, message: e.message })
        }
    }
}
