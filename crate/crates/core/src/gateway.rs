//! Chat-completion access and offline backends.
//!
//! The HTTP backend speaks the common chat-completions JSON schema: the system
//! prompt goes in a `system` message, the demonstrations and query in one
//! `user` message. Transport errors, 429 and 5xx are retried with exponential
//! backoff; 401/403 and other 4xx fail immediately.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demo_store::hex_string;
use crate::prompt::{textualize_action, PromptBundle};

pub const ENV_ENDPOINT: &str = "XICM_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "XICM_LLM_MODEL";
pub const ENV_API_KEY: &str = "XICM_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts (last status: {})", last_status.map_or("transport error".to_string(), |s| s.to_string()))]
    ExhaustedRetries { attempts: u32, last_status: Option<u16> },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("authentication failed with status {status}")]
    AuthFailure { status: u16 },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("prompt has no demonstration blocks")]
    EmptyPrompt,
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("response cache error: {0}")]
    Cache(String),
}

/// API key that never appears in debug output.
#[derive(Clone, Default, PartialEq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_empty() { "<unset>" } else { "<redacted>" })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key: Secret,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint_url: "http://localhost:8000/v1".into(),
            model_name: "Qwen2.5-72B-Instruct".into(),
            api_key: Secret::default(),
            temperature: 0.0,
            max_output_tokens: 512,
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
            max_concurrent_requests: 4,
            backoff_base: Duration::from_secs(1),
            cache_dir: None,
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `XICM_LLM_*` environment variables.
    pub fn from_env() -> Self {
        let mut cfg = GatewayConfig::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            cfg.endpoint_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            cfg.model_name = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            cfg.api_key = Secret::new(v);
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.request_timeout.is_zero() {
            return Err(GatewayError::Config("request timeout must be positive".into()));
        }
        if self.max_concurrent_requests == 0 {
            return Err(GatewayError::Config("max_concurrent_requests must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config("temperature must be non-negative".into()));
        }
        if self.endpoint_url.is_empty() {
            return Err(GatewayError::Config("endpoint url is empty".into()));
        }
        Ok(())
    }

    pub fn chat_url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    EchoNearest,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_digest: String,
    pub response_text: String,
    pub latency_secs: f64,
    pub attempt_count: u32,
    pub backend: BackendKind,
}

pub fn prompt_digest(prompt: &PromptBundle) -> String {
    hex_string(&Sha256::digest(prompt.rendered.as_bytes()))
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionRecord, GatewayError>;
}

fn offline_record(prompt: &PromptBundle, text: String, backend: BackendKind) -> CompletionRecord {
    CompletionRecord {
        prompt_digest: prompt_digest(prompt),
        response_text: text,
        latency_secs: 0.0,
        attempt_count: 1,
        backend,
    }
}

/// Replies with a fixed text.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub response: String,
}

impl ScriptedBackend {
    pub fn new(response: impl Into<String>) -> Self {
        ScriptedBackend {
            response: response.into(),
        }
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionRecord, GatewayError> {
        Ok(offline_record(prompt, self.response.clone(), BackendKind::Scripted))
    }
}

/// Action lines of the first (most similar) demonstration block.
pub fn echo_nearest_backend(prompt: &PromptBundle) -> Result<String, GatewayError> {
    let first = prompt.demo_blocks.first().ok_or(GatewayError::EmptyPrompt)?;
    Ok(first
        .actions
        .iter()
        .map(textualize_action)
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EchoNearestBackend;

impl CompletionBackend for EchoNearestBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionRecord, GatewayError> {
        Ok(offline_record(prompt, echo_nearest_backend(prompt)?, BackendKind::EchoNearest))
    }
}

struct Semaphore {
    state: Mutex<(usize, usize)>,
    cv: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(limit: usize) -> Self {
        Semaphore {
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        while st.0 >= self.limit {
            st = self.cv.wait(st).unwrap();
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        Permit(self)
    }

    fn peak(&self) -> usize {
        self.state.lock().unwrap().1
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.0.state.lock().unwrap().0 -= 1;
        self.0.cv.notify_one();
    }
}

/// On-disk cache: `<dir>/<key>.json` holding a `CompletionRecord`.
struct ResponseCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl ResponseCache {
    fn key(digest: &str, cfg: &GatewayConfig) -> String {
        let mut h = Sha256::new();
        h.update(digest.as_bytes());
        h.update(b"\n");
        h.update(cfg.model_name.as_bytes());
        h.update(b"\n");
        h.update(cfg.temperature.to_bits().to_le_bytes());
        hex_string(&h.finalize())
    }

    fn get(&self, key: &str) -> Option<CompletionRecord> {
        let text = fs::read_to_string(self.dir.join(format!("{key}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn put(&self, key: &str, record: &CompletionRecord) -> Result<(), GatewayError> {
        let _guard = self.writer.lock().unwrap();
        let cache_err = |e: std::io::Error| GatewayError::Cache(e.to_string());
        fs::create_dir_all(&self.dir).map_err(cache_err)?;
        let tmp = self.dir.join(format!("{key}.json.tmp"));
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        fs::write(&tmp, text).map_err(cache_err)?;
        fs::rename(&tmp, self.dir.join(format!("{key}.json"))).map_err(cache_err)
    }
}

enum Attempt {
    Done(String),
    Retry(Option<u16>, bool),
    Fatal(GatewayError),
}

pub struct HttpBackend {
    cfg: GatewayConfig,
    client: reqwest::blocking::Client,
    permits: Semaphore,
    cache: Option<ResponseCache>,
}

impl HttpBackend {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let cache = cfg.cache_dir.clone().map(|dir| ResponseCache {
            dir,
            writer: Mutex::new(()),
        });
        Ok(HttpBackend {
            permits: Semaphore::new(cfg.max_concurrent_requests),
            cfg,
            client,
            cache,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Highest number of simultaneous requests seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.permits.peak()
    }

    fn request_body(&self, prompt: &PromptBundle) -> serde_json::Value {
        json!({
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text()},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        })
    }

    fn attempt(&self, url: &str, body: &serde_json::Value) -> Attempt {
        let mut req = self.client.post(url).json(body);
        if !self.cfg.api_key.is_empty() {
            req = req.bearer_auth(self.cfg.api_key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(None, e.is_timeout()),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => match resp.text() {
                Ok(text) => match extract_content(&text) {
                    Ok(content) => Attempt::Done(content),
                    Err(e) => Attempt::Fatal(e),
                },
                Err(e) => Attempt::Retry(Some(status), e.is_timeout()),
            },
            401 | 403 => Attempt::Fatal(GatewayError::AuthFailure { status }),
            429 | 500..=599 => Attempt::Retry(Some(status), false),
            _ => Attempt::Fatal(GatewayError::Rejected {
                status,
                body: resp.text().unwrap_or_default(),
            }),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.cfg.backoff_base.as_secs_f64() * 2f64.powi(retry as i32);
        let jitter = rand::thread_rng().gen_range(0.0..0.25);
        Duration::from_secs_f64(base * (1.0 + jitter))
    }
}

/// Pull `choices[0].message.content` out of a completion response.
pub fn extract_content(body: &str) -> Result<String, GatewayError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionRecord, GatewayError> {
        if prompt.rendered.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let digest = prompt_digest(prompt);
        let key = ResponseCache::key(&digest, &self.cfg);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if hit.prompt_digest == digest {
                return Ok(hit);
            }
        }
        let url = self.cfg.chat_url();
        let body = self.request_body(prompt);
        let started = Instant::now();
        let mut last_status = None;
        let mut last_timeout = false;
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            let outcome = {
                let _permit = self.permits.acquire();
                self.attempt(&url, &body)
            };
            match outcome {
                Attempt::Done(text) => {
                    let record = CompletionRecord {
                        prompt_digest: digest,
                        response_text: text,
                        latency_secs: started.elapsed().as_secs_f64(),
                        attempt_count: attempt + 1,
                        backend: BackendKind::Http,
                    };
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &record)?;
                    }
                    return Ok(record);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(status, timeout) => {
                    log::debug!("attempt {} failed (status {status:?}, timeout {timeout})", attempt + 1);
                    last_status = status;
                    last_timeout = timeout;
                }
            }
        }
        let attempts = self.cfg.max_retries + 1;
        if last_timeout {
            Err(GatewayError::Timeout { attempts })
        } else {
            Err(GatewayError::ExhaustedRetries { attempts, last_status })
        }
    }
}

/// Send one prompt through a fresh HTTP backend built from `cfg`.
pub fn complete(prompt: &PromptBundle, cfg: &GatewayConfig) -> Result<CompletionRecord, GatewayError> {
    HttpBackend::new(cfg.clone())?.complete(prompt)
}
