//! Study sessions: goal assignment, per-dialog state, surveys and the audit log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use cts_core::graph::{Assignments, DatasetSplit, DialogGraph, NodeId, NodeKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::live::{AgentContext, AgentTurn, EndReason, LiveState};
use crate::run::now_ms;

const DEFAULT_GOAL_TEXTS: &str = include_str!("../data/goal_texts.json");
const ASSIGNMENT_DRAWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Vague user, guided through the tree.
    Open,
    /// Concrete question whose answer needs no variable value.
    Easy,
    /// Concrete question that needs at least one variable value.
    Hard,
}

pub const CATEGORIES: [Category; 3] = [Category::Open, Category::Easy, Category::Hard];

/// Categories of the `k`-th session: the three categories rotated by `k`.
pub fn categories_for(session_index: usize, dialogs: usize) -> Vec<Category> {
    (0..dialogs).map(|i| CATEGORIES[(session_index + i) % CATEGORIES.len()]).collect()
}

/// Hex sha256 of salt and username.
pub fn session_id(salt: &str, username: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(username.as_bytes());
    hex::encode(h.finalize())
}

/// Goal text templates per category. `{topic}` is replaced by a question
/// about the goal, `{facts}` by the user's variable values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTexts {
    pub open: String,
    pub easy: String,
    pub hard: String,
    /// Template for one fact; `{name}` and `{value}` are substituted.
    pub fact: String,
    pub fact_separator: String,
    /// Wraps the joined facts; `{list}` is substituted. Empty when no facts.
    pub facts: String,
}

impl Default for GoalTexts {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_GOAL_TEXTS).expect("built-in goal texts parse")
    }
}

impl GoalTexts {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn render(&self, category: Category, topic: &str, facts: &BTreeMap<String, String>) -> String {
        let facts = if facts.is_empty() {
            String::new()
        } else {
            let list: Vec<String> = facts
                .iter()
                .map(|(name, value)| self.fact.replace("{name}", &name.replace('_', " ")).replace("{value}", value))
                .collect();
            self.facts.replace("{list}", &list.join(&self.fact_separator))
        };
        let template = match category {
            Category::Open => &self.open,
            Category::Easy => &self.easy,
            Category::Hard => &self.hard,
        };
        template.replace("{topic}", topic).replace("{facts}", &facts)
    }
}

/// Goal nodes available per category.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoalPools {
    pub open: Vec<NodeId>,
    pub easy: Vec<NodeId>,
    pub hard: Vec<NodeId>,
}

fn reachable_assignment(graph: &DialogGraph, goal: &NodeId, rng: &mut ChaCha8Rng) -> Option<(Assignments, Vec<NodeId>)> {
    for _ in 0..ASSIGNMENT_DRAWS {
        let mut values = Assignments::new();
        for spec in graph.variables() {
            if let Some(v) = spec.domain().choose(rng) {
                values.insert(spec.name.clone(), v.clone());
            }
        }
        if let Ok(t) = graph.shortest_trajectory(goal, &values) {
            return Some((values, t.into_iter().map(|(n, _)| n).collect()));
        }
    }
    None
}

fn crosses_variable(graph: &DialogGraph, path: &[NodeId]) -> bool {
    path.iter().any(|n| graph.node(n).is_some_and(|n| n.kind == NodeKind::Variable))
}

impl GoalPools {
    /// Open goals are all goal candidates; easy and hard goals need a
    /// question in `bank` and are split by whether the way there passes a
    /// variable node.
    pub fn build(graph: &DialogGraph, bank: &DatasetSplit) -> anyhow::Result<Self> {
        let mut pools = GoalPools::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for goal in graph.goal_candidates()? {
            let Some((_, path)) = reachable_assignment(graph, &goal, &mut rng) else {
                log::warn!("goal {goal} is unreachable; not offered in the study");
                continue;
            };
            pools.open.push(goal.clone());
            if bank.questions_for(&goal).is_empty() {
                continue;
            }
            if crosses_variable(graph, &path) {
                pools.hard.push(goal);
            } else {
                pools.easy.push(goal);
            }
        }
        if pools.easy.is_empty() && pools.hard.is_empty() {
            anyhow::bail!("no goal has a question in the bank");
        }
        if pools.hard.is_empty() {
            log::warn!("no goal needs a variable value; hard dialogs use easy goals");
        }
        if pools.easy.is_empty() {
            log::warn!("every goal needs a variable value; easy dialogs use hard goals");
        }
        Ok(pools)
    }

    fn pool(&self, category: Category) -> &[NodeId] {
        match category {
            Category::Open => &self.open,
            Category::Easy if self.easy.is_empty() => &self.hard,
            Category::Easy => &self.easy,
            Category::Hard if self.hard.is_empty() => &self.easy,
            Category::Hard => &self.hard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyGoal {
    pub category: Category,
    pub node: String,
    pub text: String,
    /// Variable values the user should give, by variable name.
    pub facts: BTreeMap<String, String>,
}

/// Draws one goal per category, seeded by the session id.
pub fn assign_goals(
    graph: &DialogGraph,
    bank: &DatasetSplit,
    pools: &GoalPools,
    texts: &GoalTexts,
    categories: &[Category],
    session: &str,
) -> Vec<StudyGoal> {
    let seed = u64::from_le_bytes(Sha256::digest(session.as_bytes())[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    categories
        .iter()
        .map(|&category| {
            let goal = pools.pool(category).choose(&mut rng).expect("non-empty pool").clone();
            let (values, path) = reachable_assignment(graph, &goal, &mut rng).unwrap_or_default();
            let facts = path
                .iter()
                .filter_map(|n| graph.node(n))
                .filter(|n| n.kind == NodeKind::Variable)
                .filter_map(|n| n.variable.as_ref())
                .filter_map(|spec| values.get(&spec.name).map(|v| (spec.name.clone(), v.to_string())))
                .collect();
            let topic = bank
                .questions_for(&goal)
                .choose(&mut rng)
                .map(|e| e.text.clone())
                .unwrap_or_else(|| graph.node(&goal).map(|n| n.text.clone()).unwrap_or_default());
            StudyGoal {
                category,
                node: goal.to_string(),
                text: texts.render(category, &topic, &facts),
                facts,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<AgentTurn>,
    pub ts_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogSurvey {
    /// 1 (much too short) to 5 (much too long).
    pub perceived_length: u8,
    /// 1 to 4.
    pub satisfaction: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalSurvey {
    pub usability: Vec<u8>,
    pub trust: Vec<u8>,
}

pub const LIKERT_MAX: u8 = 5;

impl DialogSurvey {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.perceived_length) {
            return Err(format!("perceived_length must be 1 to 5, got {}", self.perceived_length));
        }
        if !(1..=4).contains(&self.satisfaction) {
            return Err(format!("satisfaction must be 1 to 4, got {}", self.satisfaction));
        }
        Ok(())
    }
}

impl FinalSurvey {
    pub fn validate(&self) -> Result<(), String> {
        for (name, items) in [("usability", &self.usability), ("trust", &self.trust)] {
            if items.is_empty() {
                return Err(format!("{name} needs at least one item"));
            }
            if let Some(v) = items.iter().find(|v| !(1..=LIKERT_MAX).contains(v)) {
                return Err(format!("{name} items must be 1 to {LIKERT_MAX}, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub index: usize,
    pub goal: StudyGoal,
    pub messages: Vec<Message>,
    pub state: LiveState,
    pub survey: Option<DialogSurvey>,
}

impl DialogRecord {
    pub fn complete(&self) -> bool {
        self.state.ended.is_some()
    }

    /// The goal node's text was shown to the user.
    pub fn goal_shown(&self) -> bool {
        self.state.shown_nodes.iter().any(|n| *n == self.goal.node)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dialog,
    DialogSurvey,
    FinalSurvey,
    Done,
}

/// Everything stored about one participant. Holds no username, only its hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub checkpoint_id: String,
    pub created_ms: u64,
    pub dialogs: Vec<DialogRecord>,
    /// Index of the dialog in progress or awaiting its survey.
    pub current: usize,
    pub final_survey: Option<FinalSurvey>,
}

impl SessionState {
    pub fn new(session_id: String, checkpoint_id: String, goals: Vec<StudyGoal>, ctx: &AgentContext) -> Self {
        SessionState {
            session_id,
            checkpoint_id,
            created_ms: now_ms(),
            dialogs: goals
                .into_iter()
                .enumerate()
                .map(|(index, goal)| DialogRecord {
                    index,
                    goal,
                    messages: Vec::new(),
                    state: ctx.new_state(),
                    survey: None,
                })
                .collect(),
            current: 0,
            final_survey: None,
        }
    }

    pub fn stage(&self) -> Stage {
        match self.dialogs.get(self.current) {
            Some(d) if !d.complete() => Stage::Dialog,
            Some(_) => Stage::DialogSurvey,
            None if self.final_survey.is_none() => Stage::FinalSurvey,
            None => Stage::Done,
        }
    }

    pub fn current_dialog(&mut self) -> Option<&mut DialogRecord> {
        self.dialogs.get_mut(self.current)
    }

    pub fn current_node(&self) -> Option<&NodeId> {
        self.dialogs.get(self.current).map(|d| &d.state.current)
    }

    pub fn finish_current(&mut self, reason: EndReason) -> bool {
        match self.current_dialog() {
            Some(d) if !d.complete() => {
                d.state.ended = Some(reason);
                true
            }
            _ => false,
        }
    }
}

#[derive(Serialize)]
struct AuditEntry<'a, P> {
    seq: u64,
    ts_ms: u64,
    event: &'a str,
    session_id: &'a str,
    payload: &'a P,
}

/// Append-only JSON-lines log of every state change.
pub struct AuditLog {
    file: Mutex<File>,
    seq: AtomicU64,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let existing = std::fs::read_to_string(path).map(|s| s.lines().count() as u64).unwrap_or(0);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            file: Mutex::new(file),
            seq: AtomicU64::new(existing),
        })
    }

    pub fn append<P: Serialize>(&self, event: &str, session_id: &str, payload: &P) -> std::io::Result<()> {
        let mut file = self.file.lock().expect("audit lock");
        let entry = AuditEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            ts_ms: now_ms(),
            event,
            session_id,
            payload,
        };
        let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::from)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_covers_every_category() {
        for k in 0..6 {
            let mut cats = categories_for(k, 3);
            assert_eq!(cats[0], CATEGORIES[k % 3]);
            cats.sort_by_key(|c| *c as u8);
            assert_eq!(cats, CATEGORIES.to_vec());
        }
    }

    #[test]
    fn session_id_is_salted_sha256() {
        // sha256("salt" + "alice")
        assert_eq!(
            session_id("salt", "alice"),
            hex::encode(Sha256::digest(b"saltalice"))
        );
        assert_ne!(session_id("salt", "alice"), session_id("pepper", "alice"));
        assert_eq!(session_id("salt", "alice").len(), 64);
    }

    #[test]
    fn survey_bounds() {
        assert!(DialogSurvey { perceived_length: 3, satisfaction: 4 }.validate().is_ok());
        assert!(DialogSurvey { perceived_length: 6, satisfaction: 1 }.validate().is_err());
        assert!(DialogSurvey { perceived_length: 1, satisfaction: 5 }.validate().is_err());
        assert!(DialogSurvey { perceived_length: 0, satisfaction: 1 }.validate().is_err());
        assert!(FinalSurvey { usability: vec![1, 5], trust: vec![3] }.validate().is_ok());
        assert!(FinalSurvey { usability: vec![], trust: vec![3] }.validate().is_err());
        assert!(FinalSurvey { usability: vec![6], trust: vec![3] }.validate().is_err());
    }

    #[test]
    fn goal_text_substitution() {
        let t = GoalTexts::default();
        let mut facts = BTreeMap::new();
        facts.insert("trip_length".to_owned(), "21".to_owned());
        let s = t.render(Category::Hard, "Can I claim meals?", &facts);
        assert!(s.contains("Can I claim meals?"));
        assert!(s.contains("trip length"));
        assert!(s.contains("21"));
        assert!(!s.contains('{'));
        assert!(!t.render(Category::Easy, "q", &BTreeMap::new()).contains('{'));
    }
}
