//! Agent-completion backends.
//!
//! Every backend maps a [`CompletionRequest`] to text. The remote client
//! talks to an OpenAI-compatible chat-completions endpoint; the others are
//! deterministic stand-ins used to check the harness end to end.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_BASE_URL: &str = "OPINION_SIM_BASE_URL";
pub const ENV_API_KEY: &str = "OPINION_SIM_API_KEY";
pub const ENV_CACHE_DIR: &str = "OPINION_SIM_CACHE_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("authentication rejected by endpoint: {0}")]
    Auth(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("oracle cannot read prompt: {0}")]
    Oracle(String),
    #[error("scripted backend has no responses left")]
    ScriptExhausted,
    #[error("cache: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Transport { attempts, .. } => *attempts,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Free-form label for logs, not part of the cache key.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system_prompt: system.into(),
            user_prompt: user.into(),
            model_id: String::new(),
            temperature: 0.0,
            max_tokens: None,
            request_tag: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub backend_name: String,
    pub from_cache: bool,
    pub latency: Duration,
    pub attempt_count: u32,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError>;

    /// Whether the two completions of a round may be issued concurrently.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

fn local_result(name: &str, text: String, started: Instant) -> CompletionResult {
    CompletionResult {
        text,
        backend_name: name.to_string(),
        from_cache: false,
        latency: started.elapsed(),
        attempt_count: 1,
    }
}

/// Replays a fixed queue of responses and records every request.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        self.seen.lock().unwrap().push(req.clone());
        let text = self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::ScriptExhausted)?;
        Ok(local_result(self.name(), text, started))
    }

    fn supports_concurrency(&self) -> bool {
        false
    }
}

/// Opinions quoted in a harness prompt, read without the classifier.
struct PromptView<'a> {
    own: &'a str,
    partner: &'a str,
    item_a: &'a str,
    options: Option<[&'a str; 3]>,
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn read_prompt(user: &str) -> Result<PromptView<'_>, BackendError> {
    let bad = || BackendError::Oracle(format!("not a harness prompt: {user:?}"));
    const OWN: &str = "This is your current opinion: \"";
    const PARTNER: &str = "Now, you interact with someone having this opinion: \"";
    let own_end = ["\". These are your previously", "\". Now, you interact"]
        .iter()
        .filter_map(|e| between(user, OWN, e))
        .min_by_key(|s| s.len())
        .ok_or_else(bad)?;
    let partner = between(user, PARTNER, "\". State ").ok_or_else(bad)?;
    if let Some(item_a) = between(
        user,
        "State how much funding should be given to ",
        " after this interaction",
    ) {
        return Ok(PromptView {
            own: own_end,
            partner,
            item_a,
            options: None,
        });
    }
    let item_a = between(user, "is your new opinion regarding ", " after this interaction").ok_or_else(bad)?;
    let a = between(user, "Option (a) is \"", "\". Option (b)").ok_or_else(bad)?;
    let b = between(user, "Option (b) is \"", "\". Option (c)").ok_or_else(bad)?;
    let c_start = user.find("Option (c) is \"").ok_or_else(bad)? + "Option (c) is \"".len();
    let c_len = user[c_start..].rfind("\".").ok_or_else(bad)?;
    let c = &user[c_start..c_start + c_len];
    Ok(PromptView {
        own: own_end,
        partner,
        item_a,
        options: Some([a, b, c]),
    })
}

fn oracle_allocation(opinion: &str) -> Result<f64, BackendError> {
    static PCT: OnceLock<Regex> = OnceLock::new();
    let pct =
        PCT.get_or_init(|| Regex::new(r"should receive (\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)% of the funding").unwrap());
    if let Some(c) = pct.captures(opinion) {
        return c[1]
            .parse()
            .map_err(|_| BackendError::Oracle(format!("bad percentage in {opinion:?}")));
    }
    if opinion.contains("should have all the funding") {
        Ok(100.0)
    } else if opinion.contains("should not have any funding") {
        Ok(0.0)
    } else if opinion.contains("measured funding") {
        Ok(50.0)
    } else {
        Err(BackendError::Oracle(format!("no allocation in {opinion:?}")))
    }
}

/// Answers with the mean of its own and its partner's allocation.
#[derive(Debug, Default, Clone, Copy)]
pub struct MidpointOracle;

impl MidpointOracle {
    pub fn reply_for(user_prompt: &str) -> Result<String, BackendError> {
        let view = read_prompt(user_prompt)?;
        let m = (oracle_allocation(view.own)? + oracle_allocation(view.partner)?) / 2.0;
        Ok(match view.options {
            None => format!(
                "After this interaction, I think {} should receive {m}% of the funding.",
                view.item_a
            ),
            Some(_) if m >= 100.0 => "Option: (a)".to_string(),
            Some(_) if m <= 0.0 => "Option: (c)".to_string(),
            Some(_) => "Option: (b)".to_string(),
        })
    }
}

impl Backend for MidpointOracle {
    fn name(&self) -> &str {
        "midpoint"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        Ok(local_result(self.name(), Self::reply_for(&req.user_prompt)?, started))
    }
}

/// Restates its own current opinion.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubbornOracle;

impl StubbornOracle {
    pub fn reply_for(user_prompt: &str) -> Result<String, BackendError> {
        let view = read_prompt(user_prompt)?;
        match view.options {
            None => Ok(view.own.to_string()),
            Some(options) => options
                .iter()
                .position(|o| *o == view.own)
                .map(|k| format!("Option: ({})", ['a', 'b', 'c'][k]))
                .ok_or_else(|| BackendError::Oracle("current opinion is not one of the options".into())),
        }
    }
}

impl Backend for StubbornOracle {
    fn name(&self) -> &str {
        "stubborn"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        Ok(local_result(self.name(), Self::reply_for(&req.user_prompt)?, started))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    backend: String,
    model_id: String,
    system_prompt: String,
    user_prompt: String,
    temperature: f64,
    max_tokens: Option<u32>,
    text: String,
}

/// Stores each response in `<dir>/<sha256>.json` and serves repeats from disk.
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn Backend>, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn key(backend: &str, req: &CompletionRequest) -> String {
        let fields = serde_json::json!([
            backend,
            req.model_id,
            req.system_prompt,
            req.user_prompt,
            req.temperature,
            req.max_tokens,
        ]);
        hex::encode(Sha256::digest(fields.to_string().as_bytes()))
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn lock_for(&self, key: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(key.to_string()).or_default().clone()
    }

    fn read(path: &Path) -> Option<CacheEntry> {
        let text = std::fs::read_to_string(path).ok()?;
        match serde_json::from_str(&text) {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("ignoring unreadable cache entry {}: {err}", path.display());
                None
            }
        }
    }
}

impl Backend for CachedBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        let key = Self::key(self.inner.name(), req);
        let lock = self.lock_for(&key);
        let _guard = lock.lock().unwrap();
        let path = self.path_for(&key);
        if let Some(entry) = Self::read(&path) {
            return Ok(CompletionResult {
                text: entry.text,
                backend_name: self.inner.name().to_string(),
                from_cache: true,
                latency: started.elapsed(),
                attempt_count: 1,
            });
        }
        let result = self.inner.complete(req)?;
        let entry = CacheEntry {
            key: key.clone(),
            backend: self.inner.name().to_string(),
            model_id: req.model_id.clone(),
            system_prompt: req.system_prompt.clone(),
            user_prompt: req.user_prompt.clone(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            text: result.text.clone(),
        };
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, body)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        Ok(result)
    }

    fn supports_concurrency(&self) -> bool {
        self.inner.supports_concurrency()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub retry_budget: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            api_key: None,
            retry_budget: 3,
            backoff_base_ms: 1000,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Fills the base URL and credential from the environment when unset.
    pub fn with_env(mut self) -> Self {
        if self.base_url.is_empty() {
            if let Ok(url) = std::env::var(ENV_BASE_URL) {
                self.base_url = url;
            }
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.base_url.is_empty() {
            return Err(BackendError::Config(format!(
                "no endpoint base URL; set it in the config or via {ENV_BASE_URL}"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn payload(req: &CompletionRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
        });
        if let Some(m) = req.max_tokens {
            body["max_tokens"] = m.into();
        }
        body
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<String, Failure> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut call = self.client.post(&url).json(&Self::payload(req));
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Failure::Fatal(BackendError::Auth(status.to_string())));
        }
        let body = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_server_error()
            || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            || status == reqwest::StatusCode::REQUEST_TIMEOUT
        {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(BackendError::Protocol(format!("HTTP {status}: {body}"))));
        }
        let value: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| Failure::Fatal(BackendError::Protocol(format!("invalid JSON: {e}"))))?;
        match value["choices"][0]["message"]["content"].as_str() {
            Some(text) if !text.trim().is_empty() => Ok(text.to_string()),
            _ => Err(Failure::Fatal(BackendError::Protocol(format!(
                "no message content in {body}"
            )))),
        }
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        let max_attempts = self.config.retry_budget + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req) {
                Ok(text) => {
                    let latency = started.elapsed();
                    log::debug!(
                        "{} answered in {latency:?} after {attempts} attempt(s)",
                        req.request_tag
                    );
                    return Ok(CompletionResult {
                        text,
                        backend_name: self.name().to_string(),
                        from_cache: false,
                        latency,
                        attempt_count: attempts,
                    });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) if attempts >= max_attempts => {
                    return Err(BackendError::Transport { attempts, message });
                }
                Err(Failure::Retryable(message)) => {
                    let wait = Duration::from_millis(self.config.backoff_base_ms << (attempts - 1).min(16));
                    log::warn!(
                        "{}: attempt {attempts} failed ({message}), retrying in {wait:?}",
                        req.request_tag
                    );
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

/// Backend selection as written in the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Stubborn,
    Midpoint,
    Scripted {
        responses: Vec<String>,
    },
    Http {
        #[serde(default)]
        model: String,
        #[serde(flatten)]
        http: HttpConfig,
        #[serde(default)]
        max_tokens: Option<u32>,
    },
}

impl BackendSpec {
    pub fn model_id(&self) -> &str {
        match self {
            Self::Http { model, .. } => model,
            _ => "",
        }
    }

    pub fn max_tokens(&self) -> Option<u32> {
        match self {
            Self::Http { max_tokens, .. } => *max_tokens,
            _ => None,
        }
    }

    /// Instantiates the backend, wrapped in a response cache when
    /// `cache_dir` (or the cache-directory environment variable) is set.
    pub fn build(&self, cache_dir: Option<&Path>) -> Result<Arc<dyn Backend>, BackendError> {
        let backend: Arc<dyn Backend> = match self {
            Self::Stubborn => Arc::new(StubbornOracle),
            Self::Midpoint => Arc::new(MidpointOracle),
            Self::Scripted { responses } => Arc::new(ScriptedBackend::new(responses.clone())),
            Self::Http { http, .. } => Arc::new(HttpBackend::new(http.clone().with_env())?),
        };
        let env_dir = std::env::var_os(ENV_CACHE_DIR).map(PathBuf::from);
        match cache_dir.map(Path::to_path_buf).or(env_dir) {
            Some(dir) => Ok(Arc::new(CachedBackend::new(backend, dir)?)),
            None => Ok(backend),
        }
    }
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stubborn" => Ok(Self::Stubborn),
            "midpoint" => Ok(Self::Midpoint),
            "http" => Ok(Self::Http {
                model: String::new(),
                http: HttpConfig::default(),
                max_tokens: None,
            }),
            _ => Err(format!("unknown backend `{s}` (expected stubborn, midpoint or http)")),
        }
    }
}
