//! Questionnaires and affective measurement.
//!
//! Probing is out-of-band: `administer` borrows the agent immutably, so
//! answers can never leak into conversational memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, ConversationId};
use crate::backend::{answer_scale, BackendError, GenerationBackend, ScaleQuery};
use crate::metrics::GroupId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scale {
    pub min: i64,
    pub max: i64,
}

impl Scale {
    pub const THERMOMETER: Scale = Scale { min: 0, max: 100 };
    pub const LOVE_HATE: Scale = Scale { min: 0, max: 10 };

    pub fn new(min: i64, max: i64) -> Result<Self, AffectError> {
        if min >= max {
            return Err(AffectError::InvalidScale { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffectKind {
    Warmth,
    Love,
    Hate,
}

impl AffectKind {
    pub fn scale(self) -> Scale {
        match self {
            AffectKind::Warmth => Scale::THERMOMETER,
            AffectKind::Love | AffectKind::Hate => Scale::LOVE_HATE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AffectKind::Warmth => "warmth",
            AffectKind::Love => "love",
            AffectKind::Hate => "hate",
        }
    }
}

impl fmt::Display for AffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AffectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warmth" => Ok(AffectKind::Warmth),
            "love" => Ok(AffectKind::Love),
            "hate" => Ok(AffectKind::Hate),
            other => Err(format!("unknown affect kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreKey {
    pub group: GroupId,
    pub kind: AffectKind,
}

impl ScoreKey {
    pub fn new(group: GroupId, kind: AffectKind) -> Self {
        Self { group, kind }
    }
}

impl fmt::Display for ScoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.group, self.kind)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AffectError {
    #[error("scale min {min} must be below max {max}")]
    InvalidScale { min: i64, max: i64 },
    #[error("item {item}: {message}")]
    InvalidItem { item: String, message: String },
    #[error("duplicate item id {0}")]
    DuplicateItemId(String),
    #[error("duplicate (group, kind) pair {0}")]
    DuplicateKey(ScoreKey),
    #[error("cannot read questionnaire {path}: {message}")]
    Load { path: String, message: String },
    #[error("item {item}: {source}")]
    Unparsable { item: String, source: BackendError },
    #[error("delta needs a pre state and a post state")]
    PhaseMismatch,
    #[error("pre and post states cover different keys")]
    KeyMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireItem {
    pub id: String,
    pub question: String,
    pub group: GroupId,
    pub kind: AffectKind,
    /// Must match the kind's canonical scale when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
}

impl QuestionnaireItem {
    pub fn scale(&self) -> Scale {
        self.scale.unwrap_or_else(|| self.kind.scale())
    }

    pub fn key(&self) -> ScoreKey {
        ScoreKey::new(self.group.clone(), self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Questionnaire {
    #[serde(default)]
    items: Vec<QuestionnaireItem>,
}

impl Questionnaire {
    pub fn new(items: Vec<QuestionnaireItem>) -> Result<Self, AffectError> {
        let mut ids = BTreeSet::new();
        let mut keys = BTreeSet::new();
        for item in &items {
            if item.id.trim().is_empty() {
                return Err(AffectError::InvalidItem {
                    item: item.id.clone(),
                    message: "empty id".into(),
                });
            }
            if item.question.trim().is_empty() {
                return Err(AffectError::InvalidItem {
                    item: item.id.clone(),
                    message: "empty question".into(),
                });
            }
            if let Some(s) = item.scale {
                if s != item.kind.scale() {
                    return Err(AffectError::InvalidItem {
                        item: item.id.clone(),
                        message: format!(
                            "{} items use the {}-{} scale",
                            item.kind,
                            item.kind.scale().min,
                            item.kind.scale().max
                        ),
                    });
                }
            }
            if !ids.insert(item.id.clone()) {
                return Err(AffectError::DuplicateItemId(item.id.clone()));
            }
            if !keys.insert(item.key()) {
                return Err(AffectError::DuplicateKey(item.key()));
            }
        }
        Ok(Self { items })
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, AffectError> {
        let raw: Questionnaire = toml::from_str(text).map_err(|e| AffectError::Load {
            path: origin.into(),
            message: e.to_string(),
        })?;
        Self::new(raw.items)
    }

    pub fn load(path: &Path) -> Result<Self, AffectError> {
        let text = std::fs::read_to_string(path).map_err(|e| AffectError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn items(&self) -> &[QuestionnaireItem] {
        &self.items
    }

    pub fn keys(&self) -> BTreeSet<ScoreKey> {
        self.items.iter().map(QuestionnaireItem::key).collect()
    }
}

/// One answered item, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub item_id: String,
    pub group: GroupId,
    pub kind: AffectKind,
    pub value: i64,
    pub raw: String,
    pub clamped: bool,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffectiveState {
    pub phase: Phase,
    pub scores: BTreeMap<ScoreKey, i64>,
    /// Answers keyed by item id.
    pub answers: BTreeMap<String, AnswerRecord>,
}

impl AffectiveState {
    pub fn empty(phase: Phase) -> Self {
        Self {
            phase,
            scores: BTreeMap::new(),
            answers: BTreeMap::new(),
        }
    }

    pub fn from_answers(phase: Phase, answers: impl IntoIterator<Item = AnswerRecord>) -> Self {
        let mut state = Self::empty(phase);
        for a in answers {
            state.insert(a);
        }
        state
    }

    pub fn insert(&mut self, answer: AnswerRecord) {
        self.scores.insert(
            ScoreKey::new(answer.group.clone(), answer.kind),
            answer.value,
        );
        self.answers.insert(answer.item_id.clone(), answer);
    }

    pub fn score(&self, group: &GroupId, kind: AffectKind) -> Option<i64> {
        self.scores
            .get(&ScoreKey::new(group.clone(), kind))
            .copied()
    }

    pub fn clamp_count(&self) -> usize {
        self.answers.values().filter(|a| a.clamped).count()
    }
}

/// Asks every questionnaire item of `agent`, using its full context for
/// `conversation`.
pub fn administer(
    agent: &Agent,
    conversation: &ConversationId,
    questionnaire: &Questionnaire,
    phase: Phase,
    backend: &dyn GenerationBackend,
) -> Result<AffectiveState, AffectError> {
    let mut state = AffectiveState::empty(phase);
    let request = agent.generation_request(conversation, "");
    for item in questionnaire.items() {
        let query = ScaleQuery {
            request: request.clone(),
            item_id: item.id.clone(),
            question: item.question.clone(),
            scale: item.scale(),
        };
        let answer = answer_scale(backend, &query).map_err(|source| AffectError::Unparsable {
            item: item.id.clone(),
            source,
        })?;
        if answer.clamped {
            log::warn!(
                "agent {} item {} ({phase}): answer {:?} clamped to {}",
                agent.id(),
                item.id,
                answer.raw,
                answer.value
            );
        }
        state.insert(AnswerRecord {
            item_id: item.id.clone(),
            group: item.group.clone(),
            kind: item.kind,
            value: answer.value,
            raw: answer.raw,
            clamped: answer.clamped,
            attempts: answer.attempts,
        });
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub value: i64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no integer found in answer")]
    NoIntegerFound,
}

/// Extracts the first integer literal in `text` and clamps it into `scale`.
///
/// A `-` or `+` directly before the digits is a sign unless it follows a
/// letter or digit (so "ten-5" reads as 5, not -5). Literals too large for
/// `i64` saturate before clamping.
pub fn parse_scale_answer(text: &str, scale: Scale) -> Result<ParsedAnswer, ParseError> {
    let bytes = text.as_bytes();
    let start = bytes
        .iter()
        .position(u8::is_ascii_digit)
        .ok_or(ParseError::NoIntegerFound)?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| start + n);
    let negative = start > 0
        && bytes[start - 1] == b'-'
        && (start == 1 || !bytes[start - 2].is_ascii_alphanumeric());

    let digits = &text[start..end];
    let magnitude = digits.parse::<i64>().unwrap_or(i64::MAX);
    let value = if negative { -magnitude } else { magnitude };
    let clamped_value = value.clamp(scale.min, scale.max);
    Ok(ParsedAnswer {
        value: clamped_value,
        clamped: clamped_value != value,
    })
}

/// Per-key change `post - pre`.
pub fn delta(
    pre: &AffectiveState,
    post: &AffectiveState,
) -> Result<BTreeMap<ScoreKey, i64>, AffectError> {
    if pre.phase != Phase::Pre || post.phase != Phase::Post {
        return Err(AffectError::PhaseMismatch);
    }
    delta_scores(&pre.scores, &post.scores)
}

/// `delta` without the phase check.
pub fn delta_scores(
    from: &BTreeMap<ScoreKey, i64>,
    to: &BTreeMap<ScoreKey, i64>,
) -> Result<BTreeMap<ScoreKey, i64>, AffectError> {
    if from.len() != to.len() || from.keys().zip(to.keys()).any(|(a, b)| a != b) {
        return Err(AffectError::KeyMismatch);
    }
    Ok(from.iter().map(|(k, v)| (k.clone(), to[k] - v)).collect())
}
