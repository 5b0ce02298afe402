//! Uniform completion interface over interchangeable backends.
//!
//! * [`HttpBackend`] speaks the OpenAI-compatible chat-completions protocol.
//! * [`MockBackend`] answers from an ordered rulebook; first match wins.
//! * [`ReplayBackend`] serves responses from a recorded [`Cassette`].
//!
//! A [`Gateway`] wraps one backend and optionally records every exchange
//! into a cassette keyed by the request [`digest`](CompletionRequest::digest).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::Role;

const UNIT_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("http error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cassette miss: no recorded response left for digest {0}")]
    CassetteMiss(String),
    #[error("no mock rule matched {role} request {digest}")]
    MockNoRuleMatched { role: Role, digest: String },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

/// Decoding parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            model: "gpt-4o".to_string(),
            temperature: 0.7,
            max_tokens: 1024,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: Role,
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
}

impl CompletionRequest {
    pub fn new(role: Role, prompt: impl Into<String>, decoding: &Decoding) -> Self {
        CompletionRequest {
            role,
            prompt: prompt.into(),
            model: decoding.model.clone(),
            temperature: decoding.temperature,
            max_tokens: decoding.max_tokens,
            seed: decoding.seed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over role, model, temperature (6 decimals), max_tokens, seed
    /// and prompt joined with the ASCII unit separator; 64 lowercase hex
    /// characters.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        let temperature = format!("{:.6}", self.temperature);
        let max_tokens = self.max_tokens.to_string();
        let fields: [&[u8]; 6] = [
            self.role.as_str().as_bytes(),
            self.model.as_bytes(),
            temperature.as_bytes(),
            max_tokens.as_bytes(),
            seed.as_bytes(),
            self.prompt.as_bytes(),
        ];
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                hasher.update([UNIT_SEPARATOR]);
            }
            hasher.update(field);
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub usage: Option<Usage>,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

// --- mock ------------------------------------------------------------------

/// One rulebook entry. A rule matches when its role (if any) equals the
/// request role and every `contains` substring occurs in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
}

impl MockRule {
    pub fn new(role: Role, contains: &[&str], response: impl Into<String>) -> Self {
        MockRule {
            role: Some(role),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
        }
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        self.role.is_none_or(|r| r == request.role)
            && self
                .contains
                .iter()
                .all(|s| request.prompt.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rulebook {
    pub rules: Vec<MockRule>,
}

impl Rulebook {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Rulebook { rules }
    }

    pub fn push(&mut self, rule: MockRule) {
        self.rules.push(rule);
    }

    pub fn from_json(json: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(json).map_err(|e| GatewayError::Cassette(format!("rulebook: {e}")))
    }

    pub fn lookup(&self, request: &CompletionRequest) -> Option<&MockRule> {
        self.rules.iter().find(|r| r.matches(request))
    }
}

/// Stateless: a pure function of the rulebook and the request.
#[derive(Debug, Clone)]
pub struct MockBackend {
    rulebook: Rulebook,
}

impl MockBackend {
    pub fn new(rulebook: Rulebook) -> Self {
        MockBackend { rulebook }
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let rule =
            self.rulebook
                .lookup(request)
                .ok_or_else(|| GatewayError::MockNoRuleMatched {
                    role: request.role,
                    digest: request.digest(),
                })?;
        Ok(CompletionResponse {
            text: rule.response.clone(),
            backend: BackendKind::Mock,
            latency_ms: 0,
            usage: None,
        })
    }
}

// --- cassette / replay -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub role: Role,
    pub text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Request digest to the FIFO list of responses recorded for it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cassette {
    pub entries: BTreeMap<String, Vec<RecordedResponse>>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, digest: String, role: Role, response: &CompletionResponse) {
        self.entries
            .entry(digest)
            .or_default()
            .push(RecordedResponse {
                role,
                text: response.text.clone(),
                latency_ms: response.latency_ms,
                usage: response.usage,
            });
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cassette serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(json).map_err(|e| GatewayError::Cassette(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Serves recorded responses; each digest's list is consumed in order.
#[derive(Debug)]
pub struct ReplayBackend {
    queues: Mutex<BTreeMap<String, VecDeque<RecordedResponse>>>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        let queues = cassette
            .entries
            .into_iter()
            .map(|(k, v)| (k, VecDeque::from(v)))
            .collect();
        ReplayBackend {
            queues: Mutex::new(queues),
        }
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let digest = request.digest();
        let mut queues = self.queues.lock().expect("replay lock poisoned");
        let recorded = queues
            .get_mut(&digest)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::CassetteMiss(digest))?;
        Ok(CompletionResponse {
            text: recorded.text,
            backend: BackendKind::Replay,
            latency_ms: recorded.latency_ms,
            usage: recorded.usage,
        })
    }
}

// --- http ------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for `POST {base_url}/chat/completions`.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.openai.com/v1";

    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    /// Base URL from `LLM_BASE_URL` (or the OpenAI default) and bearer token
    /// from `LLM_API_KEY`.
    pub fn from_env(base_url_override: Option<&str>) -> Result<Self, GatewayError> {
        let base_url = base_url_override
            .map(str::to_string)
            .or_else(|| std::env::var("LLM_BASE_URL").ok())
            .unwrap_or_else(|| Self::DEFAULT_BASE_URL.to_string());
        let api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Self::new(&base_url, api_key)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let body = ChatRequest {
            model: &request.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let started = Instant::now();
        let mut builder = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            GatewayError::Transport(format!("unexpected chat completion body: {e}"))
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Transport("completion has no message content".into()))?;
        Ok(CompletionResponse {
            text: content,
            backend: BackendKind::Http,
            latency_ms: started.elapsed().as_millis() as u64,
            usage: parsed.usage,
        })
    }
}

// --- gateway ---------------------------------------------------------------

/// One backend plus optional recording and a parallelism bound for
/// [`Gateway::par_map`].
pub struct Gateway {
    backend: Box<dyn Backend>,
    recorder: Option<Mutex<Cassette>>,
    parallelism: usize,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway {
            backend: Box::new(backend),
            recorder: None,
            parallelism: 1,
        }
    }

    pub fn mock(rulebook: Rulebook) -> Self {
        Self::new(MockBackend::new(rulebook))
    }

    pub fn replay(cassette: Cassette) -> Self {
        Self::new(ReplayBackend::new(cassette))
    }

    /// Appends every successful exchange to an in-memory cassette.
    pub fn recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(Cassette::new()));
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let response = self.backend.complete(request)?;
        if let Some(recorder) = &self.recorder {
            recorder.lock().expect("recorder lock poisoned").record(
                request.digest(),
                request.role,
                &response,
            );
        }
        Ok(response)
    }

    /// Snapshot of the recorded cassette, if recording is on.
    pub fn cassette(&self) -> Option<Cassette> {
        self.recorder
            .as_ref()
            .map(|r| r.lock().expect("recorder lock poisoned").clone())
    }

    /// Maps `f` over `items` on up to `parallelism` threads; output order
    /// follows input order.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        let workers = self.parallelism.min(items.len());
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let out = f(&items[i]);
                    *slots[i].lock().expect("slot lock poisoned") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| {
                s.into_inner()
                    .expect("slot lock poisoned")
                    .expect("slot filled")
            })
            .collect()
    }
}
