use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, GenerationBackend, GenerationRequest, ScaleQuery};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario {path}: {message}")]
    Parse { path: String, message: String },
}

/// Replies a scripted backend hands out.
///
/// Conversation replies are resolved in this order: the agent's own reply
/// queue, the agent's rules, the shared reply queue, the shared rules.
/// Rules map the author of the last transcript message (`SYSTEM` when the
/// transcript is empty, `*` for any) to a template; `{agent}`, `{turn}` and
/// `{last_author}` are substituted. Questionnaire answers come from the
/// agent's per-item queue, then the shared per-item queue.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedScenario {
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default)]
    pub rules: BTreeMap<String, String>,
    #[serde(default)]
    pub answers: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub agents: BTreeMap<String, AgentScript>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default)]
    pub rules: BTreeMap<String, String>,
    #[serde(default)]
    pub answers: BTreeMap<String, Vec<String>>,
}

fn default_retries() -> u32 {
    2
}

impl ScriptedScenario {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }
}

#[derive(Debug, Default)]
struct Cursors {
    shared_replies: usize,
    agent_replies: HashMap<String, usize>,
    answers: HashMap<(String, String), usize>,
}

/// Deterministic backend driven by a [`ScriptedScenario`]. Identical call
/// sequences always produce identical outputs.
#[derive(Debug)]
pub struct ScriptedBackend {
    scenario: Arc<ScriptedScenario>,
    cursors: Mutex<Cursors>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(scenario: Arc<ScriptedScenario>) -> Self {
        Self {
            scenario,
            cursors: Mutex::new(Cursors::default()),
            calls: AtomicU64::new(0),
        }
    }

    /// Hands out `replies` in order to whichever agent asks.
    pub fn from_queue<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Arc::new(ScriptedScenario {
            max_retries: default_retries(),
            replies: replies.into_iter().map(Into::into).collect(),
            ..Default::default()
        }))
    }

    pub fn from_rule(last_author: &str, template: &str) -> Self {
        let mut rules = BTreeMap::new();
        rules.insert(last_author.to_string(), template.to_string());
        Self::new(Arc::new(ScriptedScenario {
            max_retries: default_retries(),
            rules,
            ..Default::default()
        }))
    }

    /// A backend whose every call fails.
    pub fn always_fail() -> Self {
        Self::new(Arc::new(ScriptedScenario::default()))
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        Arc::make_mut(&mut self.scenario).max_retries = max_retries;
        self
    }

    /// Number of `generate`/`answer` calls served so far, failed ones included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn exhausted(what: String) -> BackendError {
        BackendError::BackendFailure {
            attempts: 1,
            message: format!("script exhausted: {what}"),
        }
    }
}

fn render(template: &str, request: &GenerationRequest, last_author: &str) -> String {
    template
        .replace("{agent}", &request.agent_name)
        .replace("{turn}", &request.transcript.len().to_string())
        .replace("{last_author}", last_author)
}

fn match_rule<'a>(rules: &'a BTreeMap<String, String>, last_author: &str) -> Option<&'a String> {
    rules.get(last_author).or_else(|| rules.get("*"))
}

impl GenerationBackend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut cursors = self.cursors.lock().expect("scripted backend lock poisoned");
        let last_author = request
            .transcript
            .last()
            .map(|(a, _)| a.as_str())
            .unwrap_or("SYSTEM");
        let agent = self.scenario.agents.get(&request.agent_name);

        if let Some(script) = agent {
            let cursor = cursors
                .agent_replies
                .entry(request.agent_name.clone())
                .or_insert(0);
            if let Some(reply) = script.replies.get(*cursor) {
                *cursor += 1;
                return Ok(render(reply, request, last_author));
            }
            if let Some(t) = match_rule(&script.rules, last_author) {
                return Ok(render(t, request, last_author));
            }
        }
        if let Some(reply) = self.scenario.replies.get(cursors.shared_replies) {
            cursors.shared_replies += 1;
            return Ok(render(reply, request, last_author));
        }
        if let Some(t) = match_rule(&self.scenario.rules, last_author) {
            return Ok(render(t, request, last_author));
        }
        Err(Self::exhausted(format!(
            "no reply for agent {}",
            request.agent_name
        )))
    }

    fn answer(&self, query: &ScaleQuery) -> Result<String, BackendError> {
        let agent_name = &query.request.agent_name;
        let own = self
            .scenario
            .agents
            .get(agent_name)
            .and_then(|s| s.answers.get(&query.item_id));
        let (queue, owner) = match own {
            Some(q) => (q, agent_name.clone()),
            None => match self.scenario.answers.get(&query.item_id) {
                Some(q) => (q, String::new()),
                None => {
                    // Unscripted items fall through to conversation replies.
                    return self.generate(&query.as_generation_request());
                }
            },
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut cursors = self.cursors.lock().expect("scripted backend lock poisoned");
        // Shared queues are consumed per agent so every agent sees the same answers.
        let cursor = cursors
            .answers
            .entry((format!("{owner}|{agent_name}"), query.item_id.clone()))
            .or_insert(0);
        match queue.get(*cursor) {
            Some(a) => {
                *cursor += 1;
                Ok(a.clone())
            }
            None => Err(Self::exhausted(format!(
                "no answer left for agent {agent_name}, item {}",
                query.item_id
            ))),
        }
    }

    fn max_retries(&self) -> u32 {
        self.scenario.max_retries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::Scale;

    fn request(agent: &str, transcript: &[(&str, &str)]) -> GenerationRequest {
        GenerationRequest {
            agent_name: agent.into(),
            political_standpoint: "s".into(),
            persona: "p".into(),
            demographics: "d".into(),
            transcript: transcript
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
            trigger: "t".into(),
            instruction: String::new(),
        }
    }

    #[test]
    fn queue_is_served_in_order() {
        let b = ScriptedBackend::from_queue(["a", "b"]);
        assert_eq!(b.generate(&request("x", &[])).unwrap(), "a");
        assert_eq!(b.generate(&request("x", &[])).unwrap(), "b");
    }

    #[test]
    fn exhausted_queue_fails() {
        let b = ScriptedBackend::from_queue(["a"]);
        b.generate(&request("x", &[])).unwrap();
        let err = b.generate(&request("x", &[])).unwrap_err();
        assert!(matches!(err, BackendError::BackendFailure { .. }));
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn rules_key_on_last_author() {
        let text = r#"
            [rules]
            SYSTEM = "opening from {agent}"
            d1 = "{agent} answers {last_author} at turn {turn}"
            "*" = "fallback"
        "#;
        let b = ScriptedBackend::new(Arc::new(
            ScriptedScenario::from_toml_str(text, "inline").unwrap(),
        ));
        assert_eq!(b.generate(&request("r1", &[])).unwrap(), "opening from r1");
        assert_eq!(
            b.generate(&request("r1", &[("d1", "hey")])).unwrap(),
            "r1 answers d1 at turn 1"
        );
        assert_eq!(
            b.generate(&request("r1", &[("r2", "x")])).unwrap(),
            "fallback"
        );
    }

    #[test]
    fn agent_queue_precedes_shared_rules() {
        let text = r#"
            [rules]
            "*" = "shared"
            [agents.r1]
            replies = ["mine"]
        "#;
        let b = ScriptedBackend::new(Arc::new(
            ScriptedScenario::from_toml_str(text, "inline").unwrap(),
        ));
        assert_eq!(b.generate(&request("r1", &[])).unwrap(), "mine");
        assert_eq!(b.generate(&request("r1", &[])).unwrap(), "shared");
        assert_eq!(b.generate(&request("d1", &[])).unwrap(), "shared");
    }

    #[test]
    fn answers_per_agent_and_item() {
        let text = r#"
            [answers]
            love_r = ["5", "6"]
            [agents.r1.answers]
            love_r = ["8", "9"]
        "#;
        let b = ScriptedBackend::new(Arc::new(
            ScriptedScenario::from_toml_str(text, "inline").unwrap(),
        ));
        let q = |agent: &str| ScaleQuery {
            request: request(agent, &[]),
            item_id: "love_r".into(),
            question: "q".into(),
            scale: Scale::LOVE_HATE,
        };
        assert_eq!(b.answer(&q("r1")).unwrap(), "8");
        assert_eq!(b.answer(&q("d1")).unwrap(), "5");
        assert_eq!(b.answer(&q("d2")).unwrap(), "5");
        assert_eq!(b.answer(&q("r1")).unwrap(), "9");
        assert_eq!(b.answer(&q("d1")).unwrap(), "6");
        assert!(b.answer(&q("r1")).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ScriptedScenario::from_toml_str("replys = []", "x").is_err());
    }

    #[test]
    fn identical_call_sequences_are_identical() {
        let text = r#"
            replies = ["q1", "q2"]
            [rules]
            "*" = "{agent}/{turn}"
        "#;
        let scenario = Arc::new(ScriptedScenario::from_toml_str(text, "inline").unwrap());
        let run = || {
            let b = ScriptedBackend::new(scenario.clone());
            (0..5)
                .map(|i| {
                    let t: Vec<(&str, &str)> = vec![("x", "y"); i];
                    b.generate(&request("a", &t)).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
