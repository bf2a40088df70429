//! Chat-completion querying with retries, a replay provider for offline runs, and an
//! append-only JSON-lines response cache keyed by request fingerprint.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::hashing::ContentHasher;
use crate::prompting::{PromptMode, RenderedPrompt};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
const MAX_BACKOFF: Duration = Duration::from_secs(30);
const REPLAY_SCHEME: &str = "replay:";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("provider config: {0}")]
    Config(String),
    #[error("provider `{provider}`: environment variable `{var}` holding the credential is not set")]
    MissingCredential { provider: String, var: String },
    #[error("replay store {path}: {message}")]
    Replay { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("response cache {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("response cache {path}, line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Request schema spoken by a live endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `POST …/chat/completions` with a `messages` array.
    #[default]
    OpenaiChat,
    /// `POST …/v1/messages`.
    AnthropicMessages,
    /// `POST …/api/generate` of a local Ollama server.
    OllamaGenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    /// Endpoint URL, or `replay:<path>` for a recorded response store.
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_ref: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub api_style: ApiStyle,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_max_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

impl ProviderConfig {
    /// A replay provider with default settings.
    pub fn replay(provider_id: &str, model_name: &str, store: &Path) -> Self {
        Self {
            provider_id: provider_id.into(),
            endpoint: format!("{REPLAY_SCHEME}{}", store.display()),
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            auth_ref: None,
            request_timeout_secs: default_timeout_secs(),
            max_retries: DEFAULT_MAX_RETRIES,
            max_concurrency: default_max_concurrency(),
            api_style: ApiStyle::default(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    /// Parses a TOML provider file. A relative replay path is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ClientError> {
        let mut cfg: ProviderConfig = toml::from_str(text).map_err(|e| ClientError::Config(e.to_string()))?;
        if let (Some(base), Some(rest)) = (base_dir, cfg.endpoint.strip_prefix(REPLAY_SCHEME)) {
            let p = Path::new(rest);
            if p.is_relative() {
                cfg.endpoint = format!("{REPLAY_SCHEME}{}", base.join(p).display());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = fs::read_to_string(path).map_err(|source| ClientError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::Config(format!("{}: {m}", self.provider_id)));
        if self.provider_id.trim().is_empty() {
            return Err(ClientError::Config("provider_id is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 1]");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive");
        }
        if self.endpoint.trim().is_empty() {
            return bad("endpoint is empty");
        }
        Ok(())
    }

    pub fn replay_path(&self) -> Option<PathBuf> {
        self.endpoint.strip_prefix(REPLAY_SCHEME).map(PathBuf::from)
    }

    pub fn is_replay(&self) -> bool {
        self.endpoint.starts_with(REPLAY_SCHEME)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Empty,
    TransportError,
    RateLimited,
    Timeout,
}

impl ResponseStatus {
    fn is_transient(self) -> bool {
        matches!(
            self,
            ResponseStatus::TransportError | ResponseStatus::RateLimited | ResponseStatus::Timeout
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub record_id: String,
    pub provider_id: String,
    pub mode: PromptMode,
    pub raw_text: String,
    pub status: ResponseStatus,
    pub attempt_count: u32,
    pub latency_ms: u64,
    pub request_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Content hash of everything that determines a completion request.
pub fn request_fingerprint(prompt_text: &str, model_name: &str, temperature: f64) -> String {
    let mut h = ContentHasher::new();
    h.field(model_name).field(&format!("{temperature}")).field(prompt_text);
    h.finish()
}

#[derive(Debug, Clone, Deserialize)]
struct ReplayEntry {
    request_fingerprint: String,
    #[serde(default)]
    raw_text: String,
    #[serde(default = "ok_status")]
    status: ResponseStatus,
}

fn ok_status() -> ResponseStatus {
    ResponseStatus::Ok
}

/// Recorded answers keyed by fingerprint. The file format is the response cache format,
/// so any cache from a live run doubles as a replay store; only `request_fingerprint`,
/// `raw_text` and `status` are read.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    answers: HashMap<String, (String, ResponseStatus)>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let file = File::open(path).map_err(|source| ClientError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut answers = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ClientError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(&line).map_err(|err| ClientError::Replay {
                path: path.to_path_buf(),
                message: format!("line {}: {err}", i + 1),
            })?;
            answers.entry(e.request_fingerprint).or_insert((e.raw_text, e.status));
        }
        Ok(Self { answers })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

enum Backend {
    Replay(ReplayStore),
    Http {
        agent: ureq::Agent,
        credential: Option<String>,
    },
}

/// Outcome of a single attempt.
struct Attempt {
    status: ResponseStatus,
    text: String,
    detail: Option<String>,
}

/// A validated provider ready to answer prompts.
pub struct Client {
    config: ProviderConfig,
    backend: Backend,
    calls: AtomicUsize,
}

impl Client {
    /// Validates the config and resolves the credential or replay store. Fails before
    /// any network traffic when the credential variable is unset.
    pub fn new(config: ProviderConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let backend = match config.replay_path() {
            Some(path) => Backend::Replay(ReplayStore::load(&path)?),
            None => {
                let credential = match &config.auth_ref {
                    Some(var) => Some(std::env::var(var).map_err(|_| ClientError::MissingCredential {
                        provider: config.provider_id.clone(),
                        var: var.clone(),
                    })?),
                    None => None,
                };
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(config.request_timeout_secs)))
                    .http_status_as_error(false)
                    .build()
                    .into();
                Backend::Http { agent, credential }
            }
        };
        Ok(Self {
            config,
            backend,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Number of provider calls made so far (replay lookups included).
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn fingerprint(&self, prompt: &RenderedPrompt) -> String {
        request_fingerprint(&prompt.text, &self.config.model_name, self.config.temperature)
    }

    /// Sends one prompt, retrying transient failures with exponential backoff (replay
    /// lookups are deterministic and never retried). Never fails: the final failure
    /// class is carried in the response status.
    pub fn query(&self, prompt: &RenderedPrompt) -> ModelResponse {
        let fingerprint = self.fingerprint(prompt);
        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            self.calls.fetch_add(1, Ordering::Relaxed);
            let outcome = self.attempt(&prompt.text, &fingerprint);
            let replay = matches!(self.backend, Backend::Replay(_));
            if replay || !outcome.status.is_transient() || attempts > self.config.max_retries {
                break outcome;
            }
            std::thread::sleep(self.backoff(attempts));
        };
        let latency_ms = match self.backend {
            Backend::Replay(_) => 0,
            Backend::Http { .. } => started.elapsed().as_millis() as u64,
        };
        ModelResponse {
            record_id: prompt.record_id.clone(),
            provider_id: self.config.provider_id.clone(),
            mode: prompt.mode,
            raw_text: outcome.text,
            status: outcome.status,
            attempt_count: attempts,
            latency_ms,
            request_fingerprint: fingerprint,
            detail: outcome.detail,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt - 1).min(20);
        Duration::from_millis(self.config.backoff_base_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }

    fn attempt(&self, prompt: &str, fingerprint: &str) -> Attempt {
        match &self.backend {
            Backend::Replay(store) => match store.answers.get(fingerprint) {
                Some((text, status)) => Attempt {
                    status: if *status == ResponseStatus::Ok && text.is_empty() {
                        ResponseStatus::Empty
                    } else {
                        *status
                    },
                    text: text.clone(),
                    detail: None,
                },
                None => Attempt {
                    status: ResponseStatus::TransportError,
                    text: String::new(),
                    detail: Some(format!("fingerprint miss: {fingerprint}")),
                },
            },
            Backend::Http { agent, credential } => self.http_attempt(agent, credential.as_deref(), prompt),
        }
    }

    fn http_attempt(&self, agent: &ureq::Agent, credential: Option<&str>, prompt: &str) -> Attempt {
        let cfg = &self.config;
        let (body, mut request) = match cfg.api_style {
            ApiStyle::OpenaiChat => (
                json!({
                    "model": cfg.model_name,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": cfg.temperature,
                    "max_tokens": cfg.max_output_tokens,
                }),
                agent.post(&cfg.endpoint),
            ),
            ApiStyle::AnthropicMessages => (
                json!({
                    "model": cfg.model_name,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": cfg.temperature,
                    "max_tokens": cfg.max_output_tokens,
                }),
                agent.post(&cfg.endpoint).header("anthropic-version", "2023-06-01"),
            ),
            ApiStyle::OllamaGenerate => (
                json!({
                    "model": cfg.model_name,
                    "prompt": prompt,
                    "stream": false,
                    "options": {"temperature": cfg.temperature, "num_predict": cfg.max_output_tokens},
                }),
                agent.post(&cfg.endpoint),
            ),
        };
        if let Some(key) = credential {
            request = match cfg.api_style {
                ApiStyle::AnthropicMessages => request.header("x-api-key", key),
                _ => request.header("Authorization", &format!("Bearer {key}")),
            };
        }
        let failure = |status, detail: String| Attempt {
            status,
            text: String::new(),
            detail: Some(detail),
        };
        let mut response = match request.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return failure(ResponseStatus::Timeout, format!("timeout: {t}")),
            Err(e) => return failure(ResponseStatus::TransportError, e.to_string()),
        };
        let code = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(t)) => return failure(ResponseStatus::Timeout, format!("timeout: {t}")),
            Err(e) => return failure(ResponseStatus::TransportError, e.to_string()),
        };
        match code {
            200..=299 => {}
            429 => return failure(ResponseStatus::RateLimited, format!("HTTP 429: {}", snippet(&text))),
            408 => return failure(ResponseStatus::Timeout, "HTTP 408".into()),
            _ => {
                return failure(
                    ResponseStatus::TransportError,
                    format!("HTTP {code}: {}", snippet(&text)),
                )
            }
        }
        if text.trim().is_empty() {
            return Attempt {
                status: ResponseStatus::Empty,
                text: String::new(),
                detail: None,
            };
        }
        let parsed: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return failure(ResponseStatus::TransportError, format!("malformed reply: {e}")),
        };
        match completion_text(cfg.api_style, &parsed) {
            Some(t) if t.is_empty() => Attempt {
                status: ResponseStatus::Empty,
                text: t,
                detail: None,
            },
            Some(t) => Attempt {
                status: ResponseStatus::Ok,
                text: t,
                detail: None,
            },
            None => failure(
                ResponseStatus::TransportError,
                format!("unexpected reply shape: {}", snippet(&text)),
            ),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

fn completion_text(style: ApiStyle, v: &Value) -> Option<String> {
    match style {
        ApiStyle::OpenaiChat => {
            let msg = &v.get("choices")?.get(0)?.get("message")?;
            Some(
                msg.get("content")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
            )
        }
        ApiStyle::AnthropicMessages => {
            let parts = v.get("content")?.as_array()?;
            Some(
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .concat(),
            )
        }
        ApiStyle::OllamaGenerate => v.get("response").and_then(Value::as_str).map(str::to_string),
    }
}

/// Append-only JSON-lines store of responses, indexed by fingerprint. The first
/// response stored for a fingerprint wins.
pub struct ResponseCache {
    path: PathBuf,
    index: HashMap<String, ModelResponse>,
    sink: Box<dyn Write + Send>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let resp: ModelResponse = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                index.entry(resp.request_fingerprint.clone()).or_insert(resp);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            index,
            sink: Box::new(file),
        })
    }

    /// A cache that appends to an arbitrary writer; `label` names it in errors.
    pub fn with_sink(label: &Path, sink: impl Write + Send + 'static) -> Self {
        Self {
            path: label.to_path_buf(),
            index: HashMap::new(),
            sink: Box::new(sink),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, fingerprint: &str) -> Option<&ModelResponse> {
        self.index.get(fingerprint)
    }

    pub fn responses(&self) -> impl Iterator<Item = &ModelResponse> {
        self.index.values()
    }

    /// Writes one line and flushes it before indexing the response.
    pub fn append(&mut self, response: &ModelResponse) -> Result<(), CacheError> {
        if self.index.contains_key(&response.request_fingerprint) {
            return Ok(());
        }
        let io = |source| CacheError::Io {
            path: self.path.clone(),
            source,
        };
        let mut line = serde_json::to_string(response).expect("response serializes");
        line.push('\n');
        self.sink.write_all(line.as_bytes()).map_err(io)?;
        self.sink.flush().map_err(io)?;
        self.index
            .insert(response.request_fingerprint.clone(), response.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub from_cache: usize,
    pub queried: usize,
    pub by_status: std::collections::BTreeMap<ResponseStatus, usize>,
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// One response per prompt, in prompt order.
    pub responses: Vec<ModelResponse>,
    pub summary: BatchSummary,
}

#[derive(Debug, thiserror::Error)]
#[error("batch aborted after {} of {total} responses: {source}", partial.len())]
pub struct BatchError {
    /// Responses that were persisted before the failure, in prompt order.
    pub partial: Vec<ModelResponse>,
    pub total: usize,
    #[source]
    pub source: CacheError,
}

/// Answers every prompt, reusing cached responses and querying the rest with at most
/// `max_concurrency` requests in flight. New responses are appended to the cache as
/// they arrive; the returned list follows prompt order.
pub fn run_batch(
    client: &Client,
    prompts: &[RenderedPrompt],
    cache: &mut ResponseCache,
) -> Result<BatchOutcome, BatchError> {
    let mut slots: Vec<Option<ModelResponse>> = vec![None; prompts.len()];
    let mut pending: Vec<usize> = Vec::new();
    // prompts sharing a fingerprint with an earlier pending prompt wait for its answer
    let mut first_pending: HashMap<String, usize> = HashMap::new();
    let mut followers: Vec<(usize, usize)> = Vec::new();
    let mut from_cache = 0;
    for (i, p) in prompts.iter().enumerate() {
        let fp = client.fingerprint(p);
        if let Some(hit) = cache.get(&fp) {
            slots[i] = Some(rebind(hit, p));
            from_cache += 1;
        } else if let Some(&leader) = first_pending.get(&fp) {
            followers.push((i, leader));
        } else {
            first_pending.insert(fp, i);
            pending.push(i);
        }
    }

    let workers = client.config.max_concurrency.min(pending.len());
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut failure: Option<CacheError> = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, ModelResponse)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, pending) = (&next, &abort, &pending);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let resp = client.query(&prompts[i]);
                if tx.send((i, resp)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, resp) in rx {
            if failure.is_some() {
                continue;
            }
            match cache.append(&resp) {
                Ok(()) => slots[i] = Some(resp),
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure = Some(e);
                }
            }
        }
    });

    for (i, leader) in followers {
        if let Some(resp) = slots[leader].clone() {
            slots[i] = Some(rebind(&resp, &prompts[i]));
        }
    }
    if let Some(source) = failure {
        return Err(BatchError {
            partial: slots.into_iter().flatten().collect(),
            total: prompts.len(),
            source,
        });
    }
    let responses: Vec<ModelResponse> = slots.into_iter().map(|s| s.expect("every prompt answered")).collect();
    let mut by_status = std::collections::BTreeMap::new();
    for r in &responses {
        *by_status.entry(r.status).or_insert(0) += 1;
    }
    Ok(BatchOutcome {
        summary: BatchSummary {
            total: responses.len(),
            from_cache,
            queried: pending.len(),
            by_status,
        },
        responses,
    })
}

/// A cached response re-addressed to the prompt that asked for it.
fn rebind(cached: &ModelResponse, prompt: &RenderedPrompt) -> ModelResponse {
    ModelResponse {
        record_id: prompt.record_id.clone(),
        mode: prompt.mode,
        ..cached.clone()
    }
}
