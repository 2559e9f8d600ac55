//! Client for OpenAI-compatible chat-completion endpoints.
//!
//! Requests go to `POST {base}/v1/chat/completions` with bearer auth. Transport
//! failures, 429 and 5xx responses are retried with exponential backoff; 401 is
//! never retried. Every call, successful or not, is reported to the configured
//! [`CallSink`] exactly once with its attempt count and usage.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::canonical_json;

pub const ENV_API_KEY: &str = "MADE_API_KEY";
pub const ENV_API_BASE: &str = "MADE_API_BASE";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("credentials rejected (401)")]
    Credential,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("gateway is not configured: {0}")]
    NotConfigured(String),

    #[error("price table: {0}")]
    PriceTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model name".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the request.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(self).as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_secs: f64,
    pub cost: f64,
    /// False when the provider reply carried no usage block; tokens are then 0.
    pub usage_reported: bool,
    /// False when the model had no entry in the price table; cost is then 0.
    pub priced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// Currency per input token.
    pub input: f64,
    /// Currency per output token.
    pub output: f64,
}

/// Model name → per-token prices. Loaded from a user-editable JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn new(prices: BTreeMap<String, ModelPrice>) -> Result<Self, GatewayError> {
        for (model, p) in &prices {
            if !(p.input >= 0.0 && p.output >= 0.0) {
                return Err(GatewayError::PriceTable(format!("negative price for {model}")));
            }
        }
        Ok(Self(prices))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::PriceTable(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, ModelPrice> =
            serde_json::from_str(&raw).map_err(|e| GatewayError::PriceTable(e.to_string()))?;
        Self::new(map)
    }

    pub fn get(&self, model: &str) -> Option<ModelPrice> {
        self.0.get(model).copied()
    }

    pub fn cost(&self, model: &str, input_tokens: u64, output_tokens: u64) -> Option<f64> {
        self.get(model)
            .map(|p| input_tokens as f64 * p.input + output_tokens as f64 * p.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Total wall-clock budget; no backoff sleep may push past it.
    pub budget: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            budget: Duration::from_secs(600),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given `attempt` attempts so far.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1) as i32;
        self.base_delay.mul_f64(self.factor.powi(exp))
    }
}

/// What a backend returns for one logical call.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub attempts: u32,
}

/// Record of one `complete()` call, emitted to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayCall {
    pub request_id: String,
    pub request_digest: String,
    pub model: String,
    pub attempts: u32,
    pub usage: Option<Usage>,
    pub error: Option<String>,
}

pub trait CallSink: Send + Sync {
    fn record(&self, call: GatewayCall);
}

/// Collects calls in memory.
#[derive(Debug, Default)]
pub struct CallLedger {
    calls: Mutex<Vec<GatewayCall>>,
}

impl CallLedger {
    pub fn calls(&self) -> Vec<GatewayCall> {
        self.calls.lock().unwrap().clone()
    }

    /// Removes and returns everything recorded so far.
    pub fn take(&self) -> Vec<GatewayCall> {
        std::mem::take(&mut *self.calls.lock().unwrap())
    }
}

impl CallSink for CallLedger {
    fn record(&self, call: GatewayCall) {
        self.calls.lock().unwrap().push(call);
    }
}

/// Anything that can answer a chat request: the HTTP gateway or a scripted
/// fixture.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Endpoint root, e.g. `http://localhost:8080`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub prices: PriceTable,
    pub retry: RetryPolicy,
    pub request_timeout: Duration,
    pub max_in_flight: usize,
}

impl GatewayConfig {
    /// Reads `MADE_API_BASE` and `MADE_API_KEY`.
    pub fn from_env(prices: PriceTable) -> Result<Self, GatewayError> {
        let api_base = std::env::var(ENV_API_BASE)
            .map_err(|_| GatewayError::NotConfigured(format!("{ENV_API_BASE} is not set")))?;
        Ok(Self {
            api_base,
            api_key: std::env::var(ENV_API_KEY).ok(),
            prices,
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(120),
            max_in_flight: 4,
        })
    }
}

struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    config: GatewayConfig,
    endpoint: String,
    agent: ureq::Agent,
    limiter: Limiter,
    sink: Option<Arc<dyn CallSink>>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        let endpoint = format!("{}/v1/chat/completions", config.api_base.trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        let limiter = Limiter::new(config.max_in_flight);
        Self { config, endpoint, agent, limiter, sink: None }
    }

    pub fn with_sink(mut self, sink: Arc<dyn CallSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn set_sink(&mut self, sink: Arc<dyn CallSink>) {
        self.sink = Some(sink);
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retryable(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retryable(format!("reading body: {e}")),
        };
        match status {
            200..=299 => Attempt::Done(text),
            401 => Attempt::Fatal(GatewayError::Credential),
            429 | 500..=599 => Attempt::Retryable(format!("status {status}")),
            _ => Attempt::Fatal(GatewayError::Status { status, body: excerpt(&text, 512) }),
        }
    }

    fn run(&self, request: &ChatRequest, started: Instant) -> (Result<Completion, GatewayError>, u32) {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let policy = &self.config.retry;
        let max_attempts = policy.max_attempts.clamp(1, 5);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let raw = match self.attempt(&body) {
                Attempt::Done(raw) => raw,
                Attempt::Fatal(e) => return (Err(e), attempts),
                Attempt::Retryable(message) => {
                    let delay = policy.delay_after(attempts);
                    if attempts >= max_attempts || started.elapsed() + delay > policy.budget {
                        return (Err(GatewayError::Transport { attempts, message }), attempts);
                    }
                    log::warn!("gateway attempt {attempts} failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                    continue;
                }
            };
            let result = parse_reply(&raw).map(|(text, tokens)| {
                let (input_tokens, output_tokens, usage_reported) = match tokens {
                    Some(u) => (u.prompt_tokens, u.completion_tokens, true),
                    None => {
                        log::warn!("reply for {} carried no usage block", request.request_id);
                        (0, 0, false)
                    }
                };
                let cost = self.config.prices.cost(&request.model, input_tokens, output_tokens);
                Completion {
                    text,
                    usage: Usage {
                        input_tokens,
                        output_tokens,
                        latency_secs: started.elapsed().as_secs_f64(),
                        cost: cost.unwrap_or(0.0),
                        usage_reported,
                        priced: cost.is_some(),
                    },
                    attempts,
                }
            });
            return (result, attempts);
        }
    }
}

impl ChatBackend for Gateway {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let digest = request.digest();
        let (result, attempts) = match request.validate() {
            Err(e) => (Err(e), 0),
            Ok(()) => {
                let _permit = self.limiter.acquire();
                self.run(request, Instant::now())
            }
        };
        if let Some(sink) = &self.sink {
            sink.record(GatewayCall {
                request_id: request.request_id.clone(),
                request_digest: digest,
                model: request.model.clone(),
                attempts,
                usage: result.as_ref().ok().map(|c| c.usage.clone()),
                error: result.as_ref().err().map(|e| e.to_string()),
            });
        }
        result
    }
}

enum Attempt {
    Done(String),
    Retryable(String),
    Fatal(GatewayError),
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn parse_reply(raw: &str) -> Result<(String, Option<WireUsage>), GatewayError> {
    let reply: WireReply =
        serde_json::from_str(raw).map_err(|e| GatewayError::Protocol(format!("bad reply json: {e}")))?;
    let first = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("reply has no choices".into()))?;
    let text = first
        .message
        .content
        .ok_or_else(|| GatewayError::Protocol("first choice has no content".into()))?;
    Ok((text, reply.usage))
}

fn excerpt(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub calls: usize,
    pub total_cost: f64,
    pub average_cost: f64,
    pub total_time_secs: f64,
    pub average_time_secs: f64,
    pub total_input_tokens: u64,
    pub average_input_tokens: f64,
    pub total_output_tokens: u64,
    pub average_output_tokens: f64,
    /// Some usage had no provider usage block or no price entry.
    pub incomplete: bool,
}

/// Sums and arithmetic means over a batch of usages; an empty batch is all zeros.
pub fn account(usages: &[Usage]) -> UsageSummary {
    if usages.is_empty() {
        return UsageSummary::default();
    }
    let n = usages.len() as f64;
    let total_cost: f64 = usages.iter().map(|u| u.cost).sum();
    let total_time: f64 = usages.iter().map(|u| u.latency_secs).sum();
    let total_in: u64 = usages.iter().map(|u| u.input_tokens).sum();
    let total_out: u64 = usages.iter().map(|u| u.output_tokens).sum();
    UsageSummary {
        calls: usages.len(),
        total_cost,
        average_cost: total_cost / n,
        total_time_secs: total_time,
        average_time_secs: total_time / n,
        total_input_tokens: total_in,
        average_input_tokens: total_in as f64 / n,
        total_output_tokens: total_out,
        average_output_tokens: total_out as f64 / n,
        incomplete: usages.iter().any(|u| !u.usage_reported || !u.priced),
    }
}
