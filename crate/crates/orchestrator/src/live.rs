//! Runs a trained policy against a real user, one utterance at a time.
//!
//! The agent acts greedily until it shows an input node the user has not yet
//! answered, shows a leaf, steers into a dead end or runs out of turns.

use std::collections::BTreeSet;
use std::sync::Arc;

use cts_core::agent::{AgentError, QNetwork};
use cts_core::encoding::{EncodeError, EncoderCache};
use cts_core::graph::{Assignments, DialogGraph, DialogNode, NodeId, NodeKind, Value, ValueType, VariableSpec};
use cts_core::simulator::{Action, DialogMode, Observation};
use serde::{Deserialize, Serialize};

/// Chooses the agent's next action in a live dialog.
pub trait LivePolicy: Send + Sync {
    fn decide(&self, obs: &Observation<f32>) -> Result<(usize, DialogMode), AgentError>;
}

impl LivePolicy for QNetwork<f32> {
    fn decide(&self, obs: &Observation<f32>) -> Result<(usize, DialogMode), AgentError> {
        self.act_greedy(obs)
    }
}

/// Shared, read-only pieces needed to run dialogs.
pub struct AgentContext {
    pub graph: Arc<DialogGraph>,
    pub cache: Arc<EncoderCache<f32>>,
    pub policy: Arc<dyn LivePolicy>,
    pub max_turns: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// The user pressed "found my answer".
    Found,
    /// A node without answers was shown.
    Leaf,
    /// The agent skipped into a logic node it could not resolve.
    DeadEnd,
    MaxTurns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    /// A node's text shown to the user.
    Node,
    /// Request for the user's answer at an input node.
    Prompt,
    Notice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub kind: TurnKind,
    pub node: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveState {
    pub current: NodeId,
    pub initial: Option<String>,
    pub last: String,
    pub turn: usize,
    pub shown: usize,
    pub asked_here: bool,
    pub replied_here: bool,
    pub collected: Assignments,
    /// Input nodes the user already answered.
    pub replied: BTreeSet<String>,
    /// Input node whose answer is pending.
    pub awaiting: Option<NodeId>,
    /// Nodes shown, in order (repeats included).
    pub shown_nodes: Vec<String>,
    pub modes: Vec<DialogMode>,
    pub ended: Option<EndReason>,
}

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error("the dialog has ended")]
    Ended,
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("node {0} is missing from the graph")]
    UnknownNode(String),
}

const YES: &[&str] = &["yes", "y", "yeah", "yep", "sure", "true", "correct", "right", "ok", "okay"];
const NO: &[&str] = &["no", "n", "nope", "false", "not", "never", "don't", "dont"];

/// Reads a typed variable value out of a free-text reply.
pub fn parse_value(spec: &VariableSpec, text: &str) -> Option<Value> {
    let lower = text.to_lowercase();
    match &spec.value_type {
        ValueType::Boolean => {
            let words: Vec<&str> = lower
                .split(|c: char| !(c.is_alphanumeric() || c == '\''))
                .filter(|w| !w.is_empty())
                .collect();
            let yes = words.iter().any(|w| YES.contains(w));
            let no = words.iter().any(|w| NO.contains(w));
            match (yes, no) {
                (true, false) => Some(Value::Bool(true)),
                (false, true) => Some(Value::Bool(false)),
                _ => None,
            }
        }
        ValueType::Number => first_number(&lower).map(Value::Number),
        ValueType::Enumeration(options) => options
            .iter()
            .filter(|o| lower.contains(&o.to_lowercase()))
            .max_by_key(|o| o.len())
            .map(|o| Value::Text(o.clone())),
    }
}

fn first_number(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().collect();
    let start = chars.iter().position(|c| c.is_ascii_digit())?;
    let negative = start > 0 && chars[start - 1] == '-';
    let mut s = String::new();
    for &c in &chars[start..] {
        match c {
            '0'..='9' => s.push(c),
            '.' | ',' if !s.contains('.') => s.push('.'),
            _ => break,
        }
    }
    let v: f64 = s.trim_end_matches('.').parse().ok()?;
    Some(if negative { -v } else { v })
}

fn prompt_for(node: &DialogNode) -> AgentTurn {
    let (text, options) = match (&node.kind, &node.variable) {
        (NodeKind::Variable, Some(spec)) => match &spec.value_type {
            ValueType::Boolean => ("Please answer yes or no.".to_owned(), vec!["yes".into(), "no".into()]),
            ValueType::Number => ("Please enter a number.".to_owned(), Vec::new()),
            ValueType::Enumeration(options) => ("Please choose one of the options.".to_owned(), options.clone()),
        },
        _ => (
            "Please answer in your own words.".to_owned(),
            node.answers.iter().map(|a| a.prototype_text.clone()).collect(),
        ),
    };
    AgentTurn {
        kind: TurnKind::Prompt,
        node: Some(node.id.to_string()),
        text,
        options,
    }
}

impl AgentContext {
    pub fn new_state(&self) -> LiveState {
        LiveState {
            current: self.graph.start().clone(),
            initial: None,
            last: String::new(),
            turn: 0,
            shown: 0,
            asked_here: false,
            replied_here: false,
            collected: Assignments::new(),
            replied: BTreeSet::new(),
            awaiting: None,
            shown_nodes: Vec::new(),
            modes: Vec::new(),
            ended: None,
        }
    }

    fn node(&self, id: &NodeId) -> Result<&DialogNode, LiveError> {
        self.graph.node(id).ok_or_else(|| LiveError::UnknownNode(id.to_string()))
    }

    pub fn observe(&self, state: &LiveState) -> Result<Observation<f32>, LiveError> {
        let node = self.node(&state.current)?;
        let initial = state.initial.as_deref().unwrap_or_default();
        let answer_texts: Vec<Arc<str>> = node.answers.iter().map(|a| Arc::from(a.prototype_text.as_str())).collect();
        let answers = answer_texts.iter().map(|t| self.cache.get(t)).collect::<Result<Vec<_>, _>>()?;
        Ok(Observation {
            initial: self.cache.get(initial)?,
            last: self.cache.get(&state.last)?,
            node: self.cache.get(&node.text)?,
            initial_text: Arc::from(initial),
            last_text: Arc::from(state.last.as_str()),
            node_text: Arc::from(node.text.as_str()),
            answer_texts,
            answers,
            mask: vec![true; 1 + node.answers.len()],
            turn: state.turn,
            shown: state.shown,
            max_turns: self.max_turns,
            asked_here: state.asked_here,
            replied_here: state.replied_here,
        })
    }

    fn forward(&self, mut id: NodeId, collected: &Assignments) -> Option<NodeId> {
        for _ in 0..=self.graph.len() {
            let node = self.graph.node(&id)?;
            if node.kind != NodeKind::Logic {
                return Some(id);
            }
            let b = node.branches.as_ref()?;
            id = b.target(b.select(collected)).clone();
        }
        None
    }

    /// Takes one user utterance and lets the agent act until it needs the
    /// user again or the dialog ends.
    pub fn respond(&self, state: &mut LiveState, utterance: &str) -> Result<Vec<AgentTurn>, LiveError> {
        if state.ended.is_some() {
            return Err(LiveError::Ended);
        }
        let text = utterance.trim();
        if text.is_empty() {
            return Err(LiveError::EmptyUtterance);
        }
        if state.initial.is_none() {
            state.initial = Some(text.to_owned());
        } else if let Some(waiting) = state.awaiting.clone() {
            let node = self.node(&waiting)?;
            if let (NodeKind::Variable, Some(spec)) = (node.kind, &node.variable) {
                let Some(value) = parse_value(spec, text) else {
                    let mut retry = prompt_for(node);
                    retry.kind = TurnKind::Notice;
                    retry.text = format!("Sorry, I could not read that. {}", retry.text);
                    return Ok(vec![retry]);
                };
                state.collected.insert(spec.name.clone(), value);
            }
            state.replied.insert(waiting.to_string());
            state.replied_here = true;
            state.awaiting = None;
        }
        state.last = text.to_owned();
        self.run_agent(state)
    }

    fn run_agent(&self, state: &mut LiveState) -> Result<Vec<AgentTurn>, LiveError> {
        let mut turns = Vec::new();
        while state.turn < self.max_turns {
            let obs = self.observe(state)?;
            let (action, mode) = self.policy.decide(&obs)?;
            state.turn += 1;
            state.modes.push(mode);
            let node = self.node(&state.current)?;
            match Action::from_index(action) {
                Action::Ask => {
                    let repeat = state.asked_here;
                    state.shown += 1;
                    state.asked_here = true;
                    state.shown_nodes.push(node.id.to_string());
                    if !repeat {
                        turns.push(AgentTurn {
                            kind: TurnKind::Node,
                            node: Some(node.id.to_string()),
                            text: node.text.clone(),
                            options: Vec::new(),
                        });
                    }
                    if node.expects_reply() && !state.replied.contains(node.id.as_str()) {
                        state.awaiting = Some(node.id.clone());
                        turns.push(prompt_for(node));
                        return Ok(turns);
                    }
                    if node.answers.is_empty() {
                        state.ended = Some(EndReason::Leaf);
                        return Ok(turns);
                    }
                }
                Action::Skip(i) => {
                    let target = node.answers.get(i).ok_or(AgentError::MaskedAction(action))?.target.clone();
                    match self.forward(target, &state.collected) {
                        Some(landing) => {
                            state.current = landing;
                            state.asked_here = false;
                            state.replied_here = false;
                        }
                        None => {
                            state.ended = Some(EndReason::DeadEnd);
                            turns.push(AgentTurn {
                                kind: TurnKind::Notice,
                                node: None,
                                text: "I could not find a matching answer.".into(),
                                options: Vec::new(),
                            });
                            return Ok(turns);
                        }
                    }
                }
            }
        }
        state.ended = Some(EndReason::MaxTurns);
        Ok(turns)
    }
}
