//! Dialog trees authored by domain experts.
//!
//! A [`DialogGraph`] is immutable once parsed; all validation happens in
//! [`parse_graph`]. Question and paraphrase banks live in separate
//! [`DatasetSplit`] files keyed by node / answer id.

mod parse;
mod path;
mod split;
mod stats;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::{parse_graph, parse_graph_with, serialize_graph, GraphWarning, ParseOptions};
pub use path::{Assignments, Step};
pub use split::{BankEntry, DatasetSplit, Provenance};
pub use stats::GraphStats;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty node id")]
    EmptyNodeId,
    #[error("duplicate node id {0:?}")]
    DuplicateNodeId(String),
    #[error("duplicate answer id {0:?}")]
    DuplicateAnswerId(String),
    #[error("duplicate variable {0:?}")]
    DuplicateVariable(String),
    #[error("node {from:?} has an edge to missing node {target:?}")]
    DanglingEdge { from: String, target: String },
    #[error("node {node:?} references undeclared variable {variable:?}")]
    UndeclaredVariable { node: String, variable: String },
    #[error("start node {0:?} is not declared with kind start")]
    BadStart(String),
    #[error("more than one start node: {0:?}")]
    MultipleStart(Vec<String>),
    #[error("invalid node {node:?}: {reason}")]
    InvalidNode { node: String, reason: String },
    #[error("unreachable nodes: {0:?}")]
    Unreachable(Vec<String>),
    #[error("logic node {node:?} tests {variable:?} which is not collected on every path to it")]
    VariableNotCollected { node: String, variable: String },
    #[error("goal {0:?} is not reachable under the given assignments")]
    UnreachableGoal(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("no node qualifies as a dialog goal")]
    NoGoalCandidates,
    #[error("split references unknown {kind} id {id:?}")]
    UnknownSplitKey { kind: &'static str, id: String },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Opaque node identifier, unique within one graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Start,
    Info,
    Question,
    Variable,
    Logic,
}

impl NodeKind {
    /// Nodes where the user is expected to reply after the text is shown.
    pub fn requires_input(self) -> bool {
        matches!(self, NodeKind::Question | NodeKind::Variable)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub id: String,
    pub prototype_text: String,
    pub target: NodeId,
    pub paraphrases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValueType {
    Boolean,
    Number,
    Enumeration(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub value_type: ValueType,
    /// Candidate values the simulated user samples from (numbers only).
    /// Defaults to the integers `1..=30` when absent.
    pub number_choices: Option<Vec<f64>>,
}

impl VariableSpec {
    /// All values a simulated user may hold for this variable.
    pub fn domain(&self) -> Vec<Value> {
        match &self.value_type {
            ValueType::Boolean => vec![Value::Bool(true), Value::Bool(false)],
            ValueType::Number => match &self.number_choices {
                Some(vals) => vals.iter().map(|v| Value::Number(*v)).collect(),
                None => (1..=30).map(|v| Value::Number(v as f64)).collect(),
            },
            ValueType::Enumeration(vals) => vals.iter().cloned().map(Value::Text).collect(),
        }
    }
}

/// A typed literal or collected variable value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{}", if *b { "yes" } else { "no" }),
            Value::Number(n) if n.fract() == 0.0 && n.abs() < 1e15 => write!(f, "{}", *n as i64),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn is_ordering(self) -> bool {
        !matches!(self, Comparator::Eq | Comparator::Ne)
    }

    pub fn apply(self, lhs: &Value, rhs: &Value) -> bool {
        use std::cmp::Ordering;
        let ord = match (lhs, rhs) {
            (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            _ => None,
        };
        let Some(ord) = ord else {
            return matches!(self, Comparator::Ne);
        };
        match self {
            Comparator::Eq => ord == Ordering::Equal,
            Comparator::Ne => ord != Ordering::Equal,
            Comparator::Lt => ord == Ordering::Less,
            Comparator::Le => ord != Ordering::Greater,
            Comparator::Gt => ord == Ordering::Greater,
            Comparator::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub variable: String,
    pub comparator: Comparator,
    pub constant: Value,
    pub target: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicBranches {
    pub conditions: Vec<Condition>,
    pub default: NodeId,
}

impl LogicBranches {
    /// Index of the first matching condition, or `None` for the default branch.
    /// Variables without a value fall through to the default.
    pub fn select(&self, values: &Assignments) -> Option<usize> {
        self.conditions.iter().position(|c| {
            values
                .get(&c.variable)
                .is_some_and(|v| c.comparator.apply(v, &c.constant))
        })
    }

    pub fn target(&self, choice: Option<usize>) -> &NodeId {
        match choice {
            Some(i) => &self.conditions[i].target,
            None => &self.default,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialogNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    pub answers: Vec<Answer>,
    pub questions: Vec<String>,
    pub variable: Option<VariableSpec>,
    pub branches: Option<LogicBranches>,
}

impl DialogNode {
    /// Outgoing edge targets in declaration order (answers, then logic branches).
    pub fn successors(&self) -> impl Iterator<Item = &NodeId> {
        let branch_targets = self
            .branches
            .iter()
            .flat_map(|b| b.conditions.iter().map(|c| &c.target).chain(std::iter::once(&b.default)));
        self.answers.iter().map(|a| &a.target).chain(branch_targets)
    }

    /// Whether a user answers once this node is shown: question and variable
    /// nodes, and a start node that offers answers.
    pub fn expects_reply(&self) -> bool {
        self.kind.requires_input() || (self.kind == NodeKind::Start && !self.answers.is_empty())
    }
}

/// Validated dialog tree. Construct through [`parse_graph`].
#[derive(Clone, Debug, PartialEq)]
pub struct DialogGraph {
    nodes: Vec<DialogNode>,
    index: HashMap<NodeId, usize>,
    start: NodeId,
    variables: Vec<VariableSpec>,
}

impl DialogGraph {
    pub fn start(&self) -> &NodeId {
        &self.start
    }

    pub fn start_node(&self) -> &DialogNode {
        self.node(&self.start).expect("start node exists")
    }

    pub fn node(&self, id: &NodeId) -> Option<&DialogNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_by_str(&self, id: &str) -> Option<&DialogNode> {
        self.node(&NodeId::new(id))
    }

    /// Nodes in declaration order.
    pub fn nodes(&self) -> &[DialogNode] {
        &self.nodes
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Finds an answer by id together with its owning node.
    pub fn answer(&self, answer_id: &str) -> Option<(&DialogNode, &Answer)> {
        self.nodes
            .iter()
            .find_map(|n| n.answers.iter().find(|a| a.id == answer_id).map(|a| (n, a)))
    }

    /// Nodes that may serve as dialog goals: everything with visible text
    /// except the start node and logic nodes.
    pub fn goal_candidates(&self) -> Result<Vec<NodeId>> {
        let goals: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| !matches!(n.kind, NodeKind::Start | NodeKind::Logic))
            .filter(|n| !n.text.trim().is_empty())
            .map(|n| n.id.clone())
            .collect();
        if goals.is_empty() {
            return Err(GraphError::NoGoalCandidates);
        }
        Ok(goals)
    }

    /// Ids reachable from the start node, start included.
    pub fn reachable(&self) -> Vec<NodeId> {
        self.reachable_from(&self.start)
    }

    pub fn reachable_from(&self, from: &NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let Some(&s) = self.index.get(from) else {
            return order;
        };
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            order.push(self.nodes[i].id.clone());
            for t in self.nodes[i].successors() {
                let j = self.index[t];
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        order
    }

    pub(crate) fn idx(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }
}
