//! Text-generation backends.
//!
//! Every backend implements [`GenerationBackend`]. Two implementations ship:
//! [`ScriptedBackend`] for deterministic runs and [`RemoteBackend`] for an
//! HTTP chat-completion endpoint.

mod prompt;
mod remote;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{parse_scale_answer, ParseError, Scale};

pub use prompt::{assemble_prompt, assemble_scale_prompt, TEMPLATE_VERSION};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use scripted::{ScenarioError, ScriptedBackend, ScriptedScenario};

/// Default environment variable holding the remote API key.
pub const DEFAULT_API_KEY_ENV: &str = "POLARSIM_API_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend failure after {attempts} attempt(s): {message}")]
    BackendFailure { attempts: u32, message: String },
    #[error("model returned an empty completion after {attempts} attempt(s)")]
    EmptyCompletion { attempts: u32 },
    #[error("no parsable answer after {attempts} attempt(s); last reply: {last_reply:?}")]
    UnparsableAnswer { attempts: u32, last_reply: String },
    #[error("invalid scale query: {0}")]
    InvalidQuery(String),
}

/// Everything a backend sees when asked to speak for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub agent_name: String,
    pub political_standpoint: String,
    pub persona: String,
    pub demographics: String,
    /// `(author, content)` pairs in the agent's memory order.
    pub transcript: Vec<(String, String)>,
    pub trigger: String,
    pub instruction: String,
}

/// A questionnaire probe. `item_id` lets scripted backends answer per item;
/// remote backends only see the question text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleQuery {
    pub request: GenerationRequest,
    pub item_id: String,
    pub question: String,
    pub scale: Scale,
}

impl ScaleQuery {
    /// The generation request with the question appended to the instruction.
    pub fn as_generation_request(&self) -> GenerationRequest {
        let mut req = self.request.clone();
        req.instruction = format!(
            "{}\n{}\nAnswer with a single integer between {} and {}.",
            req.instruction, self.question, self.scale.min, self.scale.max
        )
        .trim_start()
        .to_string();
        req
    }
}

/// Result of a scale probe, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleAnswer {
    pub value: i64,
    pub raw: String,
    pub clamped: bool,
    pub attempts: u32,
}

pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    /// Free-text reply to a scale question. Defaults to `generate` on the
    /// request with the question appended.
    fn answer(&self, query: &ScaleQuery) -> Result<String, BackendError> {
        self.generate(&query.as_generation_request())
    }

    /// How many extra attempts `answer_scale` makes on unparsable replies.
    fn max_retries(&self) -> u32;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for std::sync::Arc<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn answer(&self, query: &ScaleQuery) -> Result<String, BackendError> {
        (**self).answer(query)
    }

    fn max_retries(&self) -> u32 {
        (**self).max_retries()
    }
}

/// Asks a scale question until the reply contains an integer, up to
/// `max_retries + 1` attempts. The value is clamped into the scale.
pub fn answer_scale(
    backend: &dyn GenerationBackend,
    query: &ScaleQuery,
) -> Result<ScaleAnswer, BackendError> {
    if query.scale.min >= query.scale.max {
        return Err(BackendError::InvalidQuery(format!(
            "scale min {} must be below max {}",
            query.scale.min, query.scale.max
        )));
    }
    let attempts = backend.max_retries() + 1;
    let mut last_reply = String::new();
    for attempt in 1..=attempts {
        let raw = backend.answer(query)?;
        match parse_scale_answer(&raw, query.scale) {
            Ok(parsed) => {
                return Ok(ScaleAnswer {
                    value: parsed.value,
                    raw,
                    clamped: parsed.clamped,
                    attempts: attempt,
                })
            }
            Err(ParseError::NoIntegerFound) => {
                log::debug!("unparsable answer to {:?}: {raw:?}", query.item_id);
                last_reply = raw;
            }
        }
    }
    Err(BackendError::UnparsableAnswer {
        attempts,
        last_reply,
    })
}

/// Which backend an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_api_key_env")]
    pub api_key_env_var: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Scripted scenario file, relative to the experiment file.
    #[serde(default)]
    pub scenario: Option<String>,
}

fn default_max_retries() -> u32 {
    2
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_in_flight() -> usize {
    4
}
fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_temperature() -> f64 {
    1.0
}

impl BackendConfig {
    pub fn scripted() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_id: None,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            api_key_env_var: default_api_key_env(),
            temperature: default_temperature(),
            scenario: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs == 0 {
            return Err("backend timeout must be positive".into());
        }
        if self.max_in_flight == 0 {
            return Err("backend max_in_flight must be at least 1".into());
        }
        if self.api_key_env_var.trim().is_empty() {
            return Err("backend api_key_env_var must name a variable".into());
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err("remote backend requires an endpoint".into());
                }
                if self.model_id.as_deref().unwrap_or("").is_empty() {
                    return Err("remote backend requires a model_id".into());
                }
            }
            BackendKind::Scripted => {
                if self.scenario.is_none() {
                    return Err("scripted backend requires a scenario file".into());
                }
            }
        }
        Ok(())
    }
}
