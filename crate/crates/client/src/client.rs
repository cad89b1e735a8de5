use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use uprop_core::env::parse_action;
use uprop_core::prompt::ChatMessage;
use uprop_core::{Decision, GenConfig};

pub const DEFAULT_API_KEY_ENV: &str = "UPROP_API_KEY";
pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("environment variable {0} is not set; it must hold the API key")]
    MissingKey(String),

    #[error("authentication rejected by {endpoint} (HTTP {status})")]
    Credential { endpoint: String, status: u16 },

    #[error("endpoint {endpoint} does not return token log-probabilities: {detail}")]
    Capability { endpoint: String, detail: String },

    #[error("request to {endpoint} failed after {attempts} attempt(s): {detail}")]
    Transport {
        endpoint: String,
        attempts: u32,
        detail: String,
    },

    #[error("HTTP {status} from {endpoint}: {body}")]
    Http { endpoint: String, status: u16, body: String },

    #[error("unexpected response from {endpoint}: {detail}")]
    Decode { endpoint: String, detail: String },

    #[error("invalid client configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    5
}
fn default_backoff() -> f64 {
    1.0
}
fn default_inflight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    pub model_ref: String,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Seconds; attempt `k` waits about `backoff_base * 2^k`.
    #[serde(default = "default_backoff")]
    pub backoff_base: f64,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    /// Ask for all `N` samples in one request via the `n` parameter.
    #[serde(default)]
    pub batched_n: bool,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>, model_ref: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: default_key_env(),
            model_ref: model_ref.into(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            backoff_base: default_backoff(),
            max_inflight: default_inflight(),
            batched_n: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(ClientError::Config("max_inflight must be >= 1".into()));
        }
        if !(self.request_timeout.is_finite() && self.request_timeout > 0.0) {
            return Err(ClientError::Config("request_timeout must be > 0".into()));
        }
        if !(self.backoff_base.is_finite() && self.backoff_base >= 0.0) {
            return Err(ClientError::Config("backoff_base must be >= 0".into()));
        }
        if self.base_url.is_empty() {
            return Err(ClientError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}{COMPLETIONS_PATH}", self.base_url.trim_end_matches('/'))
    }
}

/// Counting semaphore bounding in-flight requests across all callers.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Successful completions.
    pub completions: u64,
    /// HTTP attempts, successful or not.
    pub attempts: u64,
    pub retries: u64,
}

/// Blocking chat-completions client; shareable across threads.
pub struct LlmClient {
    cfg: ClientConfig,
    api_key: String,
    agent: ureq::Agent,
    gate: Gate,
    completions: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
}

struct Choice {
    content: String,
    logprobs: Vec<f64>,
}

impl LlmClient {
    /// Reads the API key from `cfg.api_key_env`.
    pub fn from_env(cfg: ClientConfig) -> Result<Self> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| ClientError::MissingKey(cfg.api_key_env.clone()))?;
        Self::with_api_key(cfg, key)
    }

    pub fn with_api_key(cfg: ClientConfig, api_key: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            gate: Gate {
                free: Mutex::new(cfg.max_inflight),
                cv: Condvar::new(),
            },
            cfg,
            api_key: api_key.into(),
            agent,
            completions: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            completions: self.completions.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base * 2f64.powi(attempt as i32);
        let jitter = 0.5 + 0.5 * rand::rng().random::<f64>();
        Duration::from_secs_f64(base * jitter)
    }

    fn body(&self, messages: &[ChatMessage], temperature: f64, max_tokens: u32, n: Option<usize>) -> Value {
        let mut body = json!({
            "model": self.cfg.model_ref,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "logprobs": true,
        });
        if let Some(n) = n {
            body["n"] = json!(n);
        }
        body
    }

    /// One logical request, retried on 429/5xx/transport failure.
    fn complete(&self, body: &Value) -> Result<Vec<Choice>> {
        let endpoint = self.cfg.endpoint();
        let _pass = self.gate.acquire();
        let mut attempt = 0u32;
        loop {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let outcome = self
                .agent
                .post(&endpoint)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body);
            let retry_detail = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    match status {
                        200..=299 => {
                            let choices = parse_choices(&endpoint, &text)?;
                            self.completions.fetch_add(1, Ordering::Relaxed);
                            return Ok(choices);
                        }
                        401 | 403 => return Err(ClientError::Credential { endpoint, status }),
                        429 | 500..=599 => format!("HTTP {status}"),
                        _ => {
                            return Err(ClientError::Http {
                                endpoint,
                                status,
                                body: text,
                            })
                        }
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.cfg.max_retries {
                return Err(ClientError::Transport {
                    endpoint,
                    attempts: attempt + 1,
                    detail: retry_detail,
                });
            }
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// `n` decisions, ordered by request slot. Either all `n` or an error.
    pub fn sample_n(&self, messages: &[ChatMessage], n: usize, gen: &GenConfig) -> Result<Vec<Decision>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if self.cfg.batched_n {
            let body = self.body(messages, gen.temperature, gen.max_new_tokens, Some(n));
            let choices = self.complete(&body)?;
            if choices.len() != n {
                return Err(ClientError::Decode {
                    endpoint: self.cfg.endpoint(),
                    detail: format!("asked for {n} choices, got {}", choices.len()),
                });
            }
            return Ok(choices.into_iter().map(to_decision).collect());
        }
        let body = self.body(messages, gen.temperature, gen.max_new_tokens, None);
        let slots: Vec<Mutex<Option<Result<Decision>>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..self.cfg.max_inflight.min(n) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = self.complete(&body).and_then(|c| self.first_choice(c));
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot ran"))
            .collect()
    }

    /// Single temperature-0 completion.
    pub fn greedy(&self, messages: &[ChatMessage], gen: &GenConfig) -> Result<Decision> {
        let body = self.body(messages, 0.0, gen.max_new_tokens, None);
        let choices = self.complete(&body)?;
        self.first_choice(choices)
    }

    fn first_choice(&self, choices: Vec<Choice>) -> Result<Decision> {
        choices.into_iter().next().map(to_decision).ok_or_else(|| ClientError::Decode {
            endpoint: self.cfg.endpoint(),
            detail: "no choices in response".into(),
        })
    }
}

fn to_decision(c: Choice) -> Decision {
    let action = parse_action(&c.content).render();
    Decision::new(action, c.content, c.logprobs)
}

fn parse_choices(endpoint: &str, text: &str) -> Result<Vec<Choice>> {
    let decode = |detail: String| ClientError::Decode {
        endpoint: endpoint.to_string(),
        detail,
    };
    let v: Value = serde_json::from_str(text).map_err(|e| decode(format!("invalid JSON: {e}")))?;
    let choices = v["choices"].as_array().ok_or_else(|| decode("missing `choices`".into()))?;
    let mut out = Vec::with_capacity(choices.len());
    for (i, c) in choices.iter().enumerate() {
        let content = c["message"]["content"]
            .as_str()
            .ok_or_else(|| decode(format!("choices[{i}].message.content missing")))?
            .to_string();
        let items = c["logprobs"]["content"].as_array().ok_or_else(|| ClientError::Capability {
            endpoint: endpoint.to_string(),
            detail: format!("choices[{i}].logprobs.content missing"),
        })?;
        let logprobs = items
            .iter()
            .map(|t| t["logprob"].as_f64())
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| ClientError::Capability {
                endpoint: endpoint.to_string(),
                detail: format!("choices[{i}] has a token without `logprob`"),
            })?;
        out.push(Choice { content, logprobs });
    }
    Ok(out)
}
