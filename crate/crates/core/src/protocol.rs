//! Round-robin conversations.
//!
//! The trigger is recorded in every agent's memory under `SYSTEM`. Each turn
//! the scheduled participant replies from its memory, and the reply is
//! broadcast to every other agent (observers included) through `observe`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, AgentId, Author, ConversationId};
use crate::backend::GenerationBackend;
use crate::seed::mix_seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionTrigger {
    pub topic: String,
    pub context: String,
    pub rendered: String,
}

impl DiscussionTrigger {
    /// Combines topic, context and optional instructions into the text that
    /// opens the conversation.
    pub fn new(
        topic: impl Into<String>,
        context: impl Into<String>,
        instructions: &str,
    ) -> Result<Self, ProtocolError> {
        let topic = topic.into();
        let context = context.into();
        if topic.trim().is_empty() {
            return Err(ProtocolError::EmptyTrigger);
        }
        let mut rendered = format!("Topic: {topic}");
        if !context.trim().is_empty() {
            rendered.push_str(&format!("\nContext: {context}"));
        }
        if !instructions.trim().is_empty() {
            rendered.push_str(&format!("\n{}", instructions.trim()));
        }
        Ok(Self {
            topic,
            context,
            rendered,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub conversation: ConversationId,
    pub author: Author,
    pub content: String,
    /// Position in the conversation transcript, dense from 0.
    pub global_index: u64,
}

/// How many messages a conversation produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnBudget {
    /// Every participant speaks this many times.
    Rounds(u32),
    /// Exactly this many messages; may stop mid-cycle.
    Messages(u32),
}

impl TurnBudget {
    pub fn total_messages(&self, participants: usize) -> u64 {
        match *self {
            TurnBudget::Rounds(r) => u64::from(r) * participants as u64,
            TurnBudget::Messages(m) => u64::from(m),
        }
    }

    fn is_positive(&self) -> bool {
        match *self {
            TurnBudget::Rounds(n) | TurnBudget::Messages(n) => n > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: ConversationId,
    pub trigger: DiscussionTrigger,
    /// Participants only, in speaking order.
    pub order: Vec<AgentId>,
    pub budget: TurnBudget,
    pub transcript: Vec<Message>,
}

impl Conversation {
    pub fn is_complete(&self) -> bool {
        self.transcript.len() as u64 == self.budget.total_messages(self.order.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnOrderPolicy {
    Fixed,
    AlternateStarter,
    Randomized { seed: u64 },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("topic must not be empty")]
    EmptyTrigger,
    #[error("conversation needs at least one non-observer agent")]
    NoParticipants,
    #[error("duplicate agent id {0}")]
    DuplicateAgent(AgentId),
    #[error("turn budget must be positive")]
    EmptyBudget,
    #[error("conversation {} aborted after {} message(s): {source}", .partial.id, .partial.transcript.len())]
    Aborted {
        partial: Box<Conversation>,
        source: AgentError,
    },
}

/// Speaking order for one run.
///
/// `Fixed` keeps the input order, `AlternateStarter` rotates it by one on odd
/// runs, `Randomized` applies a Fisher-Yates shuffle seeded by
/// `(seed, run_index)`.
pub fn derive_order(
    participants: &[AgentId],
    policy: TurnOrderPolicy,
    run_index: u64,
) -> Vec<AgentId> {
    let mut order = participants.to_vec();
    match policy {
        TurnOrderPolicy::Fixed => {}
        TurnOrderPolicy::AlternateStarter => {
            if run_index % 2 == 1 && !order.is_empty() {
                order.rotate_left(1);
            }
        }
        TurnOrderPolicy::Randomized { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, run_index));
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
    }
    order
}

/// Number of maximal whitespace-delimited tokens.
pub fn word_count(content: &str) -> usize {
    content.split_whitespace().count()
}

/// Per-turn settings of a conversation.
#[derive(Debug, Clone)]
pub struct ConversationSettings {
    pub budget: TurnBudget,
    pub policy: TurnOrderPolicy,
    pub run_index: u64,
    /// Instruction handed to the responder on every turn.
    pub instruction: String,
}

/// Runs one conversation to completion. `on_message` sees every message
/// as soon as it has been broadcast. On backend failure the partial
/// conversation is returned inside [`ProtocolError::Aborted`].
pub fn run_conversation(
    agents: &mut [Agent],
    id: ConversationId,
    trigger: DiscussionTrigger,
    settings: &ConversationSettings,
    backend: &dyn GenerationBackend,
    mut on_message: impl FnMut(&Message),
) -> Result<Conversation, ProtocolError> {
    let mut seen = BTreeSet::new();
    for a in agents.iter() {
        if !seen.insert(a.id().clone()) {
            return Err(ProtocolError::DuplicateAgent(a.id().clone()));
        }
    }
    if !settings.budget.is_positive() {
        return Err(ProtocolError::EmptyBudget);
    }
    let participants: Vec<AgentId> = agents
        .iter()
        .filter(|a| !a.is_observer())
        .map(|a| a.id().clone())
        .collect();
    if participants.is_empty() {
        return Err(ProtocolError::NoParticipants);
    }
    let order = derive_order(&participants, settings.policy, settings.run_index);
    let slot_of = |id: &AgentId| agents_position(agents, id);
    let slots: Vec<usize> = order.iter().map(slot_of).collect();

    let mut conversation = Conversation {
        id: id.clone(),
        trigger,
        order,
        budget: settings.budget,
        transcript: Vec::new(),
    };
    for a in agents.iter_mut() {
        a.record(&id, Author::System, conversation.trigger.rendered.clone())
            .map_err(|source| abort(&conversation, source))?;
    }

    let total = settings.budget.total_messages(slots.len());
    for k in 0..total {
        let speaker = slots[(k % slots.len() as u64) as usize];
        let content = match agents[speaker].reply(&id, backend, &settings.instruction) {
            Ok(c) => c,
            Err(source) => return Err(abort(&conversation, source)),
        };
        let message = Message {
            conversation: id.clone(),
            author: Author::Agent(agents[speaker].id().clone()),
            content,
            global_index: k,
        };
        for (i, a) in agents.iter_mut().enumerate() {
            if i != speaker {
                a.observe(&id, &message)
                    .map_err(|source| abort(&conversation, source))?;
            }
        }
        on_message(&message);
        conversation.transcript.push(message);
    }
    Ok(conversation)
}

fn agents_position(agents: &[Agent], id: &AgentId) -> usize {
    agents
        .iter()
        .position(|a| a.id() == id)
        .expect("ordered participant comes from the agent set")
}

fn abort(conversation: &Conversation, source: AgentError) -> ProtocolError {
    ProtocolError::Aborted {
        partial: Box::new(conversation.clone()),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PersonaProfile;
    use crate::backend::{BackendError, GenerationRequest, ScriptedBackend};

    fn agent(id: &str, observer: bool) -> Agent {
        Agent::new(
            AgentId::new(id).unwrap(),
            PersonaProfile::new(
                format!("You are persona {id}."),
                format!("You live in town {id}."),
                format!("You follow movement {id}."),
                observer,
            )
            .unwrap(),
        )
    }

    fn ids(v: &[&str]) -> Vec<AgentId> {
        v.iter().map(|s| AgentId::new(*s).unwrap()).collect()
    }

    fn settings(
        budget: TurnBudget,
        policy: TurnOrderPolicy,
        run_index: u64,
    ) -> ConversationSettings {
        ConversationSettings {
            budget,
            policy,
            run_index,
            instruction: "Reply briefly.".into(),
        }
    }

    fn trigger() -> DiscussionTrigger {
        DiscussionTrigger::new("Gardening", "A neighborhood forum.", "Keep it short.").unwrap()
    }

    fn authors(c: &Conversation) -> Vec<String> {
        c.transcript.iter().map(|m| m.author.to_string()).collect()
    }

    #[test]
    fn round_robin_with_observer() {
        let mut agents = vec![agent("A", false), agent("B", false), agent("C", true)];
        let backend = ScriptedBackend::from_rule("*", "{agent} says hi at {turn}");
        let conv = ConversationId::new("c1");
        let c = run_conversation(
            &mut agents,
            conv.clone(),
            trigger(),
            &settings(TurnBudget::Rounds(2), TurnOrderPolicy::Fixed, 0),
            &backend,
            |_| {},
        )
        .unwrap();
        assert_eq!(authors(&c), vec!["A", "B", "A", "B"]);
        assert!(c.is_complete());
        let c_mem = agents[2].memory().entries(&conv);
        assert_eq!(c_mem.len(), 5);
        assert_eq!(c_mem[0].author, Author::System);
        for a in &agents {
            let entries = a.memory().entries(&conv);
            assert_eq!(entries.len(), 1 + c.transcript.len());
            for (m, e) in c.transcript.iter().zip(&entries[1..]) {
                assert_eq!((&m.author, &m.content), (&e.author, &e.content));
            }
        }
        let idx: Vec<u64> = c.transcript.iter().map(|m| m.global_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_participant_monologue() {
        let mut agents = vec![agent("A", false)];
        let backend = ScriptedBackend::from_rule("*", "again");
        let c = run_conversation(
            &mut agents,
            ConversationId::new("c"),
            trigger(),
            &settings(TurnBudget::Rounds(3), TurnOrderPolicy::Fixed, 0),
            &backend,
            |_| {},
        )
        .unwrap();
        assert_eq!(authors(&c), vec!["A", "A", "A"]);
    }

    #[test]
    fn message_budget_may_end_mid_cycle() {
        let mut agents = vec![agent("R1", false), agent("D1", false)];
        let backend = ScriptedBackend::from_rule("*", "ok");
        let c = run_conversation(
            &mut agents,
            ConversationId::new("c"),
            trigger(),
            &settings(
                TurnBudget::Messages(9),
                TurnOrderPolicy::AlternateStarter,
                1,
            ),
            &backend,
            |_| {},
        )
        .unwrap();
        assert_eq!(c.transcript.len(), 9);
        assert_eq!(authors(&c)[0], "D1");
        assert_eq!(authors(&c)[8], "D1");
        assert!(c.is_complete());
    }

    #[test]
    fn no_participants_is_an_error() {
        let mut agents = vec![agent("C", true)];
        let backend = ScriptedBackend::from_rule("*", "x");
        let err = run_conversation(
            &mut agents,
            ConversationId::new("c"),
            trigger(),
            &settings(TurnBudget::Rounds(1), TurnOrderPolicy::Fixed, 0),
            &backend,
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::NoParticipants));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut agents = vec![agent("A", false), agent("A", false)];
        let backend = ScriptedBackend::from_rule("*", "x");
        let err = run_conversation(
            &mut agents,
            ConversationId::new("c"),
            trigger(),
            &settings(TurnBudget::Rounds(1), TurnOrderPolicy::Fixed, 0),
            &backend,
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::DuplicateAgent(_)));
    }

    #[test]
    fn backend_failure_keeps_partial_transcript() {
        let mut agents = vec![agent("A", false), agent("B", false)];
        let backend = ScriptedBackend::from_queue(["one", "two", "three"]);
        let mut streamed = 0;
        let err = run_conversation(
            &mut agents,
            ConversationId::new("c"),
            trigger(),
            &settings(TurnBudget::Rounds(3), TurnOrderPolicy::Fixed, 0),
            &backend,
            |_| streamed += 1,
        )
        .unwrap_err();
        match err {
            ProtocolError::Aborted { partial, source } => {
                assert_eq!(partial.transcript.len(), 3);
                assert!(!partial.is_complete());
                assert!(matches!(
                    source,
                    AgentError::Backend(BackendError::BackendFailure { .. })
                ));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(streamed, 3);
    }

    #[test]
    fn derive_order_rules() {
        let p = ids(&["R1", "D1"]);
        assert_eq!(
            derive_order(&p, TurnOrderPolicy::AlternateStarter, 0),
            ids(&["R1", "D1"])
        );
        assert_eq!(
            derive_order(&p, TurnOrderPolicy::AlternateStarter, 1),
            ids(&["D1", "R1"])
        );
        assert_eq!(
            derive_order(&p, TurnOrderPolicy::AlternateStarter, 2),
            ids(&["R1", "D1"])
        );
        for i in 0..5 {
            assert_eq!(derive_order(&p, TurnOrderPolicy::Fixed, i), p);
        }
        let many = ids(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        let r = TurnOrderPolicy::Randomized { seed: 42 };
        assert_eq!(derive_order(&many, r, 3), derive_order(&many, r, 3));
        let variants: BTreeSet<Vec<AgentId>> = (0..20).map(|i| derive_order(&many, r, i)).collect();
        assert!(variants.len() > 1);
    }

    #[test]
    fn trigger_contains_topic_and_context() {
        let t = trigger();
        assert!(t.rendered.contains("Gardening"));
        assert!(t.rendered.contains("A neighborhood forum."));
        assert!(DiscussionTrigger::new(" ", "ctx", "").is_err());
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count("Hello world"), 2);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  a\tb\nc  "), 3);
    }

    /// Records every request so tests can inspect what each agent was shown.
    struct Recording(std::sync::Mutex<Vec<GenerationRequest>>);

    impl GenerationBackend for Recording {
        fn generate(&self, r: &GenerationRequest) -> Result<String, BackendError> {
            self.0.lock().unwrap().push(r.clone());
            Ok(format!("reply from {}", r.agent_name))
        }
        fn max_retries(&self) -> u32 {
            0
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn broadcast_and_privacy(
                n in 1usize..5,
                observers in 0usize..3,
                rounds in 1u32..4,
                seed in any::<u64>(),
            ) {
                let mut agents: Vec<Agent> = (0..n).map(|i| agent(&format!("P{i}"), false)).collect();
                agents.extend((0..observers).map(|i| agent(&format!("O{i}"), true)));
                let backend = Recording(Default::default());
                let conv = ConversationId::new("c");
                let c = run_conversation(
                    &mut agents,
                    conv.clone(),
                    trigger(),
                    &settings(TurnBudget::Rounds(rounds), TurnOrderPolicy::Randomized { seed }, 0),
                    &backend,
                    |_| {},
                ).unwrap();
                prop_assert_eq!(c.transcript.len(), rounds as usize * n);
                for (k, m) in c.transcript.iter().enumerate() {
                    prop_assert_eq!(m.author.agent_id(), Some(&c.order[k % n]));
                    prop_assert!(!m.author.to_string().starts_with('O'));
                }
                for a in &agents {
                    prop_assert_eq!(a.memory().entries(&conv).len(), 1 + c.transcript.len());
                }
                for req in backend.0.lock().unwrap().iter() {
                    for other in agents.iter().filter(|a| a.id().as_str() != req.agent_name) {
                        let p = other.profile();
                        prop_assert!(!req.persona.contains(p.persona_description()));
                        prop_assert!(!req.demographics.contains(p.demographics()));
                        prop_assert!(!req.political_standpoint.contains(p.political_standpoint()));
                        let flat = crate::backend::assemble_prompt(req);
                        prop_assert!(!flat.contains(p.persona_description()));
                    }
                }
            }
        }
    }
}
