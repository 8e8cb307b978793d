//! Agents, their profiles, and conversation-keyed memory.
//!
//! An agent can do two things with a message: `respond` (record it, then
//! generate a reply through a backend) or `observe` (record it only).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationBackend, GenerationRequest};
use crate::protocol::Message;

/// Identifier of an agent within one experiment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(value: impl Into<String>) -> Result<Self, AgentError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(AgentError::EmptyId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of a conversation. One run hosts exactly one conversation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversationId(pub String);

impl ConversationId {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Author of a memory entry. `System` is reserved for the discussion trigger
/// and can never collide with an agent id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    System,
    Agent(AgentId),
}

impl Author {
    pub fn agent_id(&self) -> Option<&AgentId> {
        match self {
            Author::System => None,
            Author::Agent(id) => Some(id),
        }
    }
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::System => f.write_str("SYSTEM"),
            Author::Agent(id) => write!(f, "{id}"),
        }
    }
}

impl From<AgentId> for Author {
    fn from(id: AgentId) -> Self {
        Author::Agent(id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("agent id must not be empty")]
    EmptyId,
    #[error("persona_description must not be empty")]
    EmptyPersona,
    #[error("political_standpoint must not be empty")]
    EmptyStandpoint,
    #[error("memory content must not be empty")]
    EmptyContent,
    #[error("agent {0} is an observer and cannot respond")]
    ObserverCannotRespond(AgentId),
    #[error("message belongs to conversation {found}, expected {expected}")]
    WrongConversation {
        expected: ConversationId,
        found: ConversationId,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Profile text is kept verbatim; the engine never rewrites it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    persona_description: String,
    demographics: String,
    political_standpoint: String,
    is_observer: bool,
}

impl PersonaProfile {
    pub fn new(
        persona_description: impl Into<String>,
        demographics: impl Into<String>,
        political_standpoint: impl Into<String>,
        is_observer: bool,
    ) -> Result<Self, AgentError> {
        let persona_description = persona_description.into();
        let political_standpoint = political_standpoint.into();
        if persona_description.trim().is_empty() {
            return Err(AgentError::EmptyPersona);
        }
        if political_standpoint.trim().is_empty() {
            return Err(AgentError::EmptyStandpoint);
        }
        Ok(Self {
            persona_description,
            demographics: demographics.into(),
            political_standpoint,
            is_observer,
        })
    }

    pub fn persona_description(&self) -> &str {
        &self.persona_description
    }

    pub fn demographics(&self) -> &str {
        &self.demographics
    }

    pub fn political_standpoint(&self) -> &str {
        &self.political_standpoint
    }

    pub fn is_observer(&self) -> bool {
        self.is_observer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub author: Author,
    pub content: String,
    pub turn_index: u64,
}

/// Append-only, per-conversation history. Nothing is evicted or summarized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    entries: BTreeMap<ConversationId, Vec<MemoryEntry>>,
}

impl Memory {
    pub fn entries(&self, conversation: &ConversationId) -> &[MemoryEntry] {
        self.entries
            .get(conversation)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn conversations(&self) -> impl Iterator<Item = &ConversationId> {
        self.entries.keys()
    }

    fn append(&mut self, conversation: &ConversationId, author: Author, content: String) {
        let list = self.entries.entry(conversation.clone()).or_default();
        let turn_index = list.last().map_or(0, |e| e.turn_index + 1);
        list.push(MemoryEntry {
            author,
            content,
            turn_index,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    id: AgentId,
    profile: PersonaProfile,
    memory: Memory,
}

impl Agent {
    pub fn new(id: AgentId, profile: PersonaProfile) -> Self {
        Self {
            id,
            profile,
            memory: Memory::default(),
        }
    }

    pub fn id(&self) -> &AgentId {
        &self.id
    }

    pub fn profile(&self) -> &PersonaProfile {
        &self.profile
    }

    pub fn is_observer(&self) -> bool {
        self.profile.is_observer
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    /// Appends an entry to the conversation's memory with the next turn index.
    pub fn record(
        &mut self,
        conversation: &ConversationId,
        author: Author,
        content: impl Into<String>,
    ) -> Result<(), AgentError> {
        let content = content.into();
        if content.is_empty() {
            return Err(AgentError::EmptyContent);
        }
        self.memory.append(conversation, author, content);
        Ok(())
    }

    /// Records `incoming`, then asks the backend for a reply and records it
    /// as authored by this agent. The incoming message stays recorded even
    /// when generation fails. The returned message is indexed right after
    /// `incoming`.
    pub fn respond(
        &mut self,
        conversation: &ConversationId,
        incoming: &Message,
        backend: &dyn GenerationBackend,
        instruction: &str,
    ) -> Result<Message, AgentError> {
        if self.is_observer() {
            return Err(AgentError::ObserverCannotRespond(self.id.clone()));
        }
        check_conversation(conversation, incoming)?;
        self.record(
            conversation,
            incoming.author.clone(),
            incoming.content.clone(),
        )?;
        let content = self.reply(conversation, backend, instruction)?;
        Ok(Message {
            conversation: conversation.clone(),
            author: Author::Agent(self.id.clone()),
            content,
            global_index: incoming.global_index + 1,
        })
    }

    /// Generates a reply from the current memory without recording any
    /// incoming message first. Used by the round-robin scheduler, where the
    /// latest message already reached this agent through broadcast.
    pub fn reply(
        &mut self,
        conversation: &ConversationId,
        backend: &dyn GenerationBackend,
        instruction: &str,
    ) -> Result<String, AgentError> {
        if self.is_observer() {
            return Err(AgentError::ObserverCannotRespond(self.id.clone()));
        }
        let request = self.generation_request(conversation, instruction);
        let text = backend.generate(&request)?;
        self.record(conversation, Author::Agent(self.id.clone()), text.clone())?;
        Ok(text)
    }

    /// Records `incoming` with no backend call.
    pub fn observe(
        &mut self,
        conversation: &ConversationId,
        incoming: &Message,
    ) -> Result<(), AgentError> {
        check_conversation(conversation, incoming)?;
        self.record(
            conversation,
            incoming.author.clone(),
            incoming.content.clone(),
        )
    }

    /// Builds the generation context from this agent's own profile and memory
    /// only. The first `SYSTEM` entry becomes the trigger; all other entries
    /// form the transcript in memory order.
    pub fn generation_request(
        &self,
        conversation: &ConversationId,
        instruction: &str,
    ) -> GenerationRequest {
        let entries = self.memory.entries(conversation);
        let trigger = entries
            .iter()
            .find(|e| e.author == Author::System)
            .map(|e| e.content.clone())
            .unwrap_or_default();
        let transcript = entries
            .iter()
            .filter(|e| e.author != Author::System)
            .map(|e| (e.author.to_string(), e.content.clone()))
            .collect();
        GenerationRequest {
            agent_name: self.id.to_string(),
            political_standpoint: self.profile.political_standpoint.clone(),
            persona: self.profile.persona_description.clone(),
            demographics: self.profile.demographics.clone(),
            transcript,
            trigger,
            instruction: instruction.to_string(),
        }
    }
}

fn check_conversation(expected: &ConversationId, msg: &Message) -> Result<(), AgentError> {
    if &msg.conversation != expected {
        return Err(AgentError::WrongConversation {
            expected: expected.clone(),
            found: msg.conversation.clone(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    fn agent(id: &str, observer: bool) -> Agent {
        Agent::new(
            AgentId::new(id).unwrap(),
            PersonaProfile::new(
                format!("You are {id}, a retired teacher."),
                "You are 64 years old.",
                format!("You lean {id}-ward."),
                observer,
            )
            .unwrap(),
        )
    }

    fn msg(conv: &str, author: &str, content: &str, idx: u64) -> Message {
        Message {
            conversation: ConversationId::new(conv),
            author: Author::Agent(AgentId::new(author).unwrap()),
            content: content.into(),
            global_index: idx,
        }
    }

    #[test]
    fn first_record_gets_index_zero() {
        let mut a = agent("a", false);
        let conv = ConversationId::new("conv1");
        a.record(&conv, Author::System, "trigger").unwrap();
        assert_eq!(
            a.memory().entries(&conv),
            &[MemoryEntry {
                author: Author::System,
                content: "trigger".into(),
                turn_index: 0
            }]
        );
    }

    #[test]
    fn successive_records_are_ordered() {
        let mut a = agent("a", false);
        let conv = ConversationId::new("conv1");
        a.record(&conv, Author::System, "one").unwrap();
        a.record(&conv, Author::System, "two").unwrap();
        let e = a.memory().entries(&conv);
        assert_eq!((e[0].turn_index, e[0].content.as_str()), (0, "one"));
        assert_eq!((e[1].turn_index, e[1].content.as_str()), (1, "two"));
    }

    #[test]
    fn conversations_are_indexed_independently() {
        let mut a = agent("a", false);
        let c1 = ConversationId::new("conv1");
        let c2 = ConversationId::new("conv2");
        a.record(&c1, Author::System, "x").unwrap();
        a.record(&c1, Author::System, "y").unwrap();
        a.record(&c2, Author::System, "z").unwrap();
        assert_eq!(a.memory().entries(&c1).len(), 2);
        assert_eq!(a.memory().entries(&c2)[0].turn_index, 0);
    }

    #[test]
    fn empty_content_is_rejected() {
        let mut a = agent("a", false);
        let err = a.record(&ConversationId::new("c"), Author::System, "");
        assert_eq!(err, Err(AgentError::EmptyContent));
    }

    #[test]
    fn respond_records_incoming_then_reply() {
        let mut a = agent("a", false);
        let conv = ConversationId::new("c");
        let backend = ScriptedBackend::from_queue(["ok"]);
        let out = a
            .respond(&conv, &msg("c", "b", "hello", 0), &backend, "")
            .unwrap();
        assert_eq!(out.content, "ok");
        assert_eq!(out.global_index, 1);
        let e = a.memory().entries(&conv);
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].content, "hello");
        assert_eq!(e[1].author, Author::Agent(a.id().clone()));
        assert_eq!(e[1].content, "ok");
    }

    #[test]
    fn observer_cannot_respond() {
        let mut a = agent("c", true);
        let backend = ScriptedBackend::from_queue(["ok"]);
        let err = a
            .respond(
                &ConversationId::new("c"),
                &msg("c", "b", "hi", 0),
                &backend,
                "",
            )
            .unwrap_err();
        assert!(matches!(err, AgentError::ObserverCannotRespond(_)));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn failed_generation_keeps_incoming() {
        let mut a = agent("a", false);
        let conv = ConversationId::new("c");
        let backend = ScriptedBackend::always_fail();
        let err = a
            .respond(&conv, &msg("c", "b", "hello", 0), &backend, "")
            .unwrap_err();
        assert!(matches!(err, AgentError::Backend(_)));
        assert_eq!(a.memory().entries(&conv).len(), 1);
        assert_eq!(a.memory().entries(&conv)[0].content, "hello");
    }

    #[test]
    fn observe_appends_without_backend() {
        let mut obs = agent("c", true);
        let conv = ConversationId::new("c");
        let backend = ScriptedBackend::from_queue(["unused"]);
        for i in 0..3 {
            obs.observe(&conv, &msg("c", "a", &format!("m{i}"), i))
                .unwrap();
        }
        let idx: Vec<u64> = obs
            .memory()
            .entries(&conv)
            .iter()
            .map(|e| e.turn_index)
            .collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(backend.calls(), 0);

        let mut participant = agent("a", false);
        participant.observe(&conv, &msg("c", "b", "hi", 0)).unwrap();
        assert_eq!(participant.memory().entries(&conv).len(), 1);
    }

    #[test]
    fn wrong_conversation_is_rejected() {
        let mut a = agent("a", false);
        let err = a
            .observe(&ConversationId::new("c1"), &msg("c2", "b", "x", 0))
            .unwrap_err();
        assert!(matches!(err, AgentError::WrongConversation { .. }));
    }

    #[test]
    fn profile_requires_persona_and_standpoint() {
        assert_eq!(
            PersonaProfile::new(" ", "d", "s", false),
            Err(AgentError::EmptyPersona)
        );
        assert_eq!(
            PersonaProfile::new("p", "d", "", false),
            Err(AgentError::EmptyStandpoint)
        );
        assert!(PersonaProfile::new("p", "", "s", false).is_ok());
    }

    #[test]
    fn generation_request_splits_trigger_and_transcript() {
        let mut a = agent("a", false);
        let conv = ConversationId::new("c");
        a.record(&conv, Author::System, "Talk about parks.")
            .unwrap();
        a.observe(&conv, &msg("c", "b", "I like parks", 0)).unwrap();
        let req = a.generation_request(&conv, "Be brief.");
        assert_eq!(req.trigger, "Talk about parks.");
        assert_eq!(
            req.transcript,
            vec![("b".to_string(), "I like parks".to_string())]
        );
        assert_eq!(req.agent_name, "a");
        assert_eq!(req.instruction, "Be brief.");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Record(u8),
            Observe(u8),
            Respond(u8),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                (0u8..3).prop_map(Op::Record),
                (0u8..3).prop_map(Op::Observe),
                (0u8..3).prop_map(Op::Respond),
            ]
        }

        proptest! {
            #[test]
            fn turn_indexes_stay_dense(ops in proptest::collection::vec(op(), 0..40)) {
                let mut a = agent("a", false);
                let backend = ScriptedBackend::from_rule("*", "reply");
                for (i, o) in ops.iter().enumerate() {
                    let (conv, before) = match o {
                        Op::Record(c) | Op::Observe(c) | Op::Respond(c) => {
                            let conv = ConversationId::new(format!("c{c}"));
                            let n = a.memory().entries(&conv).len();
                            (conv, n)
                        }
                    };
                    let m = Message {
                        conversation: conv.clone(),
                        author: Author::Agent(AgentId::new("b").unwrap()),
                        content: format!("m{i}"),
                        global_index: i as u64,
                    };
                    let added = match o {
                        Op::Record(_) => { a.record(&conv, Author::System, "t").unwrap(); 1 }
                        Op::Observe(_) => { a.observe(&conv, &m).unwrap(); 1 }
                        Op::Respond(_) => { a.respond(&conv, &m, &backend, "").unwrap(); 2 }
                    };
                    prop_assert_eq!(a.memory().entries(&conv).len(), before + added);
                }
                for conv in a.memory().conversations() {
                    for (i, e) in a.memory().entries(conv).iter().enumerate() {
                        prop_assert_eq!(e.turn_index, i as u64);
                    }
                }
            }
        }
    }
}
