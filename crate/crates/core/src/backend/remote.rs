use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{assemble_prompt, BackendConfig, BackendError, GenerationBackend, GenerationRequest};

/// Fixed-count retries with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(4),
        }
    }

    /// Delay before retry number `retry` (1-based): 250 ms, 500 ms, 1 s, ... capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.initial_backoff
            .saturating_mul(factor)
            .min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_id: String,
    pub api_key: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub temperature: f64,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    /// Builds the remote configuration, reading the API key from the
    /// environment variable named in `config`. Keys are never read from files.
    pub fn from_backend_config(config: &BackendConfig) -> Result<Self, String> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env_var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                format!(
                    "environment variable {} is not set; it must hold the API key",
                    config.api_key_env_var
                )
            })?;
        Ok(Self {
            endpoint: config.endpoint.clone().unwrap_or_default(),
            model_id: config.model_id.clone().unwrap_or_default(),
            api_key,
            timeout: config.timeout(),
            max_in_flight: config.max_in_flight,
            temperature: config.temperature,
            retry: RetryPolicy::new(config.max_retries),
        })
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct AdmissionGate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a AdmissionGate);

impl AdmissionGate {
    fn new(limit: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("admission gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("admission gate poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("admission gate poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

enum Failure {
    Transport(String),
    Empty,
}

/// Chat-completion client. One prompt is sent as a single user message:
///
/// ```json
/// {"model": "...", "messages": [{"role": "user", "content": "..."}], "temperature": 1.0}
/// ```
///
/// and the reply is read from `choices[0].message.content`.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: AdmissionGate,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model_id", &self.config.model_id)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = AdmissionGate::new(config.max_in_flight);
        Self {
            config,
            agent,
            gate,
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String, Failure> {
        let _permit = self.gate.acquire();
        let body = json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Failure::Transport(format!("HTTP {}", status.as_u16())));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Transport(format!("malformed response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(Failure::Empty);
        }
        Ok(text.trim().to_string())
    }
}

impl GenerationBackend for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let prompt = assemble_prompt(request);
        let attempts = self.config.retry.max_retries + 1;
        let mut last = Failure::Transport(String::new());
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.backoff(attempt - 1));
            }
            match self.attempt(&prompt) {
                Ok(text) => return Ok(text),
                Err(f) => {
                    if let Failure::Transport(m) = &f {
                        log::warn!(
                            "attempt {attempt}/{attempts} to {} failed: {m}",
                            self.config.endpoint
                        );
                    }
                    last = f;
                }
            }
        }
        Err(match last {
            Failure::Empty => BackendError::EmptyCompletion { attempts },
            Failure::Transport(message) => BackendError::BackendFailure { attempts, message },
        })
    }

    fn max_retries(&self) -> u32 {
        self.config.retry.max_retries
    }
}
