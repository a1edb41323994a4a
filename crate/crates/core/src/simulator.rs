//! Simulated user and dialog environment.
//!
//! An episode draws a hidden goal node, a dialog mode and variable values.
//! The agent walks the graph by showing the current node (`Ask`) or moving
//! along one of its answers (`Skip`). An episode succeeds only if the goal
//! node's text is shown.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EmbeddingVector, EncodeError, EncoderCache};
use crate::graph::{Answer, Assignments, DatasetSplit, DialogGraph, GraphError, NodeId, NodeKind, Step};
use crate::Scalar;

const DEFAULT_OPENERS: &str = include_str!("../data/vague_openers.txt");

const MAX_ASSIGNMENT_DRAWS: usize = 256;

/// Openers a guided-mode user starts with.
pub fn default_openers() -> Vec<String> {
    DEFAULT_OPENERS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("episode is over; call reset")]
    EpisodeDone,
    #[error("no episode in progress")]
    NoEpisode,
    #[error("action {0} is masked")]
    MaskedAction(usize),
    #[error("no goal candidate has questions for free mode")]
    NoFreeModeGoals,
    #[error("guided mode needs at least one opener")]
    NoOpeners,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("transcript: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogMode {
    Guided,
    Free,
}

impl DialogMode {
    /// Class index for the mode head.
    pub fn index(self) -> usize {
        match self {
            DialogMode::Guided => 0,
            DialogMode::Free => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            DialogMode::Guided
        } else {
            DialogMode::Free
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub r_goal: f64,
    pub r_correct_step: f64,
    pub r_wrong_step: f64,
    pub r_ask_free_nongoal: f64,
    pub max_turns: usize,
    /// Probability that an episode runs in free mode.
    pub free_mode_probability: f64,
    /// Probability that a reply uses a keyword-style paraphrase.
    pub keyword_probability: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            r_goal: 30.0,
            r_correct_step: 1.0,
            r_wrong_step: -1.0,
            r_ask_free_nongoal: -0.5,
            max_turns: 50,
            free_mode_probability: 0.5,
            keyword_probability: 0.3,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_goal > 0.0) {
            return Err("r_goal must be positive".into());
        }
        if !(self.r_wrong_step < 0.0) {
            return Err("r_wrong_step must be negative".into());
        }
        if self.max_turns == 0 {
            return Err("max_turns must be at least 1".into());
        }
        for (name, p) in [
            ("free_mode_probability", self.free_mode_probability),
            ("keyword_probability", self.keyword_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// What the simulated user wants. Hidden from the agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserGoal {
    pub goal: NodeId,
    pub mode: DialogMode,
    pub assignments: Assignments,
    pub trajectory: Vec<(NodeId, Step)>,
    pub initial_utterance: String,
    /// Reply given at each node so far, keyed by node id.
    pub responses: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Ask,
    Skip(usize),
}

impl Action {
    /// Position in the action mask: ASK first, then one slot per answer.
    pub fn index(self) -> usize {
        match self {
            Action::Ask => 0,
            Action::Skip(i) => i + 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Ask
        } else {
            Action::Skip(i - 1)
        }
    }
}

/// Everything the agent sees at one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T> {
    pub initial_text: Arc<str>,
    pub last_text: Arc<str>,
    pub node_text: Arc<str>,
    pub answer_texts: Vec<Arc<str>>,
    pub initial: EmbeddingVector<T>,
    pub last: EmbeddingVector<T>,
    pub node: EmbeddingVector<T>,
    pub answers: Vec<EmbeddingVector<T>>,
    pub mask: Vec<bool>,
    pub turn: usize,
    pub shown: usize,
    pub max_turns: usize,
    /// The current node's text has been shown.
    pub asked_here: bool,
    /// The user replied at the current node.
    pub replied_here: bool,
}

pub const SCALAR_FEATURES: usize = 4;

impl<T: Scalar> Observation<T> {
    pub fn num_actions(&self) -> usize {
        self.mask.len()
    }

    pub fn legal_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }

    pub fn scalars(&self) -> [T; SCALAR_FEATURES] {
        let max = T::of_usize(self.max_turns.max(1));
        let flag = |b: bool| if b { T::one() } else { T::zero() };
        [
            T::of_usize(self.turn) / max,
            T::of_usize(self.shown) / max,
            flag(self.asked_here),
            flag(self.replied_here),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub reached_goal: bool,
    pub asked: bool,
    pub correct_transition: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult<T> {
    /// `None` once the episode is over.
    pub observation: Option<Observation<T>>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of an episode transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub mode: DialogMode,
    pub node: String,
    pub action: String,
    pub utterance: Option<String>,
    pub reward: f64,
    pub shown: bool,
}

/// Number of nodes whose text the user actually saw.
pub fn perceived_length(log: &[TurnRecord]) -> usize {
    log.iter().filter(|r| r.shown).count()
}

pub fn write_transcript_jsonl(log: &[TurnRecord], mut out: impl Write) -> Result<(), SimError> {
    for r in log {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub goal: UserGoal,
    pub current: NodeId,
    pub turn: usize,
    pub shown: usize,
    pub asked_here: bool,
    pub replied_here: bool,
    pub last_utterance: String,
    pub collected: Assignments,
    /// Nodes still ahead on the way to the goal, ending with the goal.
    pub remaining: Vec<NodeId>,
    pub done: bool,
    pub success: bool,
}

/// Serializable environment state for resuming mid-episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulatorSnapshot {
    pub rng: ChaCha8Rng,
    pub episode: Option<EpisodeState>,
    pub transcript: Vec<TurnRecord>,
}

/// Everything needed to build simulators over one dataset: a training
/// environment on the train split and evaluation environments on the test split.
pub struct EnvFactory<T: Scalar> {
    pub graph: Arc<DialogGraph>,
    pub train: Arc<DatasetSplit>,
    pub eval: Arc<DatasetSplit>,
    pub openers: Arc<[String]>,
    pub cache: Arc<EncoderCache<T>>,
    pub config: SimulatorConfig,
}

impl<T: Scalar> Clone for EnvFactory<T> {
    fn clone(&self) -> Self {
        EnvFactory {
            graph: self.graph.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
            openers: self.openers.clone(),
            cache: self.cache.clone(),
            config: self.config.clone(),
        }
    }
}

impl<T: Scalar> EnvFactory<T> {
    /// Builds a factory and pre-encodes every text the simulator can emit.
    pub fn new(
        graph: Arc<DialogGraph>,
        train: Arc<DatasetSplit>,
        eval: Arc<DatasetSplit>,
        openers: Vec<String>,
        encoder: Arc<dyn crate::encoding::TextEncoder>,
        config: SimulatorConfig,
    ) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        let cache = Arc::new(EncoderCache::new(encoder));
        let mut texts: Vec<&str> = openers.iter().map(String::as_str).collect();
        for node in graph.nodes() {
            texts.push(&node.text);
            for a in &node.answers {
                texts.push(&a.prototype_text);
                texts.extend(a.paraphrases.iter().map(String::as_str));
            }
        }
        for split in [&train, &eval] {
            for entries in split.questions.values().chain(split.paraphrases.values()) {
                texts.extend(entries.iter().map(|e| e.text.as_str()));
            }
        }
        cache.warm(texts)?;
        Ok(EnvFactory {
            graph,
            train,
            eval,
            openers: openers.into(),
            cache,
            config,
        })
    }

    pub fn train_env(&self, seed: u64) -> Result<Simulator<T>, SimError> {
        Simulator::new(self.graph.clone(), self.train.clone(), self.openers.clone(), self.cache.clone(), self.config.clone(), seed)
    }

    pub fn eval_env(&self, seed: u64) -> Result<Simulator<T>, SimError> {
        Simulator::new(self.graph.clone(), self.eval.clone(), self.openers.clone(), self.cache.clone(), self.config.clone(), seed)
    }
}

pub struct Simulator<T: Scalar> {
    graph: Arc<DialogGraph>,
    split: Arc<DatasetSplit>,
    openers: Arc<[String]>,
    cache: Arc<EncoderCache<T>>,
    config: SimulatorConfig,
    candidates: Vec<NodeId>,
    free_candidates: Vec<NodeId>,
    rng: ChaCha8Rng,
    episode: Option<EpisodeState>,
    transcript: Vec<TurnRecord>,
}

impl<T: Scalar> Simulator<T> {
    pub fn new(
        graph: Arc<DialogGraph>,
        split: Arc<DatasetSplit>,
        openers: Arc<[String]>,
        cache: Arc<EncoderCache<T>>,
        config: SimulatorConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        let candidates = graph.goal_candidates()?;
        let free_candidates: Vec<NodeId> = candidates
            .iter()
            .filter(|id| !split.questions_for(id).is_empty())
            .cloned()
            .collect();
        if config.free_mode_probability > 0.0 && free_candidates.is_empty() {
            return Err(SimError::NoFreeModeGoals);
        }
        if config.free_mode_probability < 1.0 && openers.is_empty() {
            return Err(SimError::NoOpeners);
        }
        Ok(Simulator {
            graph,
            split,
            openers,
            cache,
            config,
            candidates,
            free_candidates,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episode: None,
            transcript: Vec::new(),
        })
    }

    pub fn graph(&self) -> &Arc<DialogGraph> {
        &self.graph
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    pub fn goal_candidates(&self) -> &[NodeId] {
        &self.candidates
    }

    /// Candidates usable in free mode (those with at least one question).
    pub fn free_goal_candidates(&self) -> &[NodeId] {
        &self.free_candidates
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    pub fn transcript(&self) -> &[TurnRecord] {
        &self.transcript
    }

    pub fn snapshot(&self) -> SimulatorSnapshot {
        SimulatorSnapshot {
            rng: self.rng.clone(),
            episode: self.episode.clone(),
            transcript: self.transcript.clone(),
        }
    }

    pub fn restore(&mut self, snapshot: SimulatorSnapshot) {
        self.rng = snapshot.rng;
        self.episode = snapshot.episode;
        self.transcript = snapshot.transcript;
    }

    /// Starts an episode with a freshly sampled goal and mode.
    pub fn reset(&mut self) -> Result<(Observation<T>, UserGoal), SimError> {
        let mode = if self.rng.gen_bool(self.config.free_mode_probability) {
            DialogMode::Free
        } else {
            DialogMode::Guided
        };
        self.reset_in_mode(mode)
    }

    /// Starts an episode in `mode` with a uniformly drawn goal.
    pub fn reset_in_mode(&mut self, mode: DialogMode) -> Result<(Observation<T>, UserGoal), SimError> {
        let pool = match mode {
            DialogMode::Free => &self.free_candidates,
            DialogMode::Guided => &self.candidates,
        };
        let goal = pool.choose(&mut self.rng).expect("non-empty candidate pool").clone();
        self.reset_with(goal, mode)
    }

    /// Starts an episode with the given goal and mode; variable values and
    /// the opener are still sampled.
    pub fn reset_with(&mut self, goal: NodeId, mode: DialogMode) -> Result<(Observation<T>, UserGoal), SimError> {
        // redraw values until the goal lies behind the branches they select
        let mut attempt = 0;
        let (assignments, trajectory) = loop {
            let mut assignments = Assignments::new();
            for spec in self.graph.variables() {
                let domain = spec.domain();
                if let Some(v) = domain.choose(&mut self.rng) {
                    assignments.insert(spec.name.clone(), v.clone());
                }
            }
            match self.graph.shortest_trajectory(&goal, &assignments) {
                Ok(t) => break (assignments, t),
                Err(GraphError::UnreachableGoal(_)) if attempt + 1 < MAX_ASSIGNMENT_DRAWS => attempt += 1,
                Err(e) => return Err(e.into()),
            }
        };
        let initial_utterance = match mode {
            DialogMode::Free => self
                .split
                .questions_for(&goal)
                .choose(&mut self.rng)
                .ok_or(SimError::NoFreeModeGoals)?
                .text
                .clone(),
            DialogMode::Guided => self.openers.choose(&mut self.rng).ok_or(SimError::NoOpeners)?.clone(),
        };
        let start = self.graph.start().clone();
        let mut remaining = self.graph.trajectory_nodes(&trajectory, &goal);
        remaining.remove(0);
        let user = UserGoal {
            goal,
            mode,
            assignments,
            trajectory,
            initial_utterance: initial_utterance.clone(),
            responses: BTreeMap::new(),
        };
        self.episode = Some(EpisodeState {
            goal: user.clone(),
            current: start,
            turn: 0,
            shown: 0,
            asked_here: false,
            replied_here: false,
            last_utterance: initial_utterance,
            collected: Assignments::new(),
            remaining,
            done: false,
            success: false,
        });
        self.transcript.clear();
        Ok((self.observe()?, user))
    }

    /// Observation for the current state of the running episode.
    pub fn observe(&self) -> Result<Observation<T>, SimError> {
        let ep = self.episode.as_ref().ok_or(SimError::NoEpisode)?;
        let node = self.graph.node(&ep.current).ok_or_else(|| GraphError::UnknownNode(ep.current.to_string()))?;
        let text = |s: &str| -> Arc<str> { Arc::from(s) };
        let answer_texts: Vec<Arc<str>> = node.answers.iter().map(|a| text(&a.prototype_text)).collect();
        let answers = answer_texts
            .iter()
            .map(|t| self.cache.get(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mask = vec![true; 1 + node.answers.len()];
        Ok(Observation {
            initial: self.cache.get(&ep.goal.initial_utterance)?,
            last: self.cache.get(&ep.last_utterance)?,
            node: self.cache.get(&node.text)?,
            initial_text: text(&ep.goal.initial_utterance),
            last_text: text(&ep.last_utterance),
            node_text: text(&node.text),
            answer_texts,
            answers,
            mask,
            turn: ep.turn,
            shown: ep.shown,
            max_turns: self.config.max_turns,
            asked_here: ep.asked_here,
            replied_here: ep.replied_here,
        })
    }

    /// Collected values plus the user's values for variables whose node is
    /// still reachable, so they can be collected later.
    fn effective_assignments(&self, ep: &EpisodeState) -> Assignments {
        let mut values = ep.collected.clone();
        let ahead: HashSet<NodeId> = self.graph.reachable_from(&ep.current).into_iter().collect();
        for node in self.graph.nodes() {
            if let (NodeKind::Variable, Some(spec)) = (node.kind, &node.variable) {
                if ahead.contains(&node.id) {
                    if let Some(v) = ep.goal.assignments.get(&spec.name) {
                        values.entry(spec.name.clone()).or_insert_with(|| v.clone());
                    }
                }
            }
        }
        values
    }

    fn reply_for(&mut self, answer: &Answer) -> String {
        let entries = self.split.paraphrases_for(&answer.id);
        let keyword: Vec<&str> = entries
            .iter()
            .filter(|e| e.method() == Some("B"))
            .map(|e| e.text.as_str())
            .collect();
        if !keyword.is_empty() && self.rng.gen_bool(self.config.keyword_probability) {
            return keyword.choose(&mut self.rng).expect("non-empty").to_string();
        }
        let mut pool: Vec<&str> = vec![answer.prototype_text.as_str()];
        pool.extend(entries.iter().filter(|e| e.method() != Some("B")).map(|e| e.text.as_str()));
        pool.extend(answer.paraphrases.iter().map(String::as_str));
        pool.choose(&mut self.rng).expect("non-empty").to_string()
    }

    /// Follows logic nodes from `id` using collected values only.
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

    pub fn step(&mut self, action: Action) -> Result<StepResult<T>, SimError> {
        let mut ep = self.episode.take().ok_or(SimError::NoEpisode)?;
        let outcome = self.apply(&mut ep, action);
        self.episode = Some(ep);
        let (reward, info, record) = outcome?;
        self.transcript.push(record);
        let ep = self.episode.as_ref().expect("episode");
        let done = ep.done;
        Ok(StepResult {
            observation: if done { None } else { Some(self.observe()?) },
            reward,
            done,
            info,
        })
    }

    fn apply(&mut self, ep: &mut EpisodeState, action: Action) -> Result<(f64, StepInfo, TurnRecord), SimError> {
        if ep.done {
            return Err(SimError::EpisodeDone);
        }
        let node = self
            .graph
            .node(&ep.current)
            .ok_or_else(|| GraphError::UnknownNode(ep.current.to_string()))?
            .clone();
        if let Action::Skip(i) = action {
            if i >= node.answers.len() {
                return Err(SimError::MaskedAction(action.index()));
            }
        }

        let mut reward = 0.0;
        let mut info = StepInfo::default();
        let mut record = TurnRecord {
            mode: ep.goal.mode,
            node: node.id.to_string(),
            action: String::new(),
            utterance: None,
            reward: 0.0,
            shown: false,
        };
        ep.turn += 1;

        match action {
            Action::Ask => {
                record.action = "ask".into();
                record.shown = true;
                info.asked = true;
                ep.shown += 1;
                ep.asked_here = true;
                if node.id == ep.goal.goal {
                    reward += self.config.r_goal;
                    info.reached_goal = true;
                    ep.done = true;
                    ep.success = true;
                } else {
                    if ep.goal.mode == DialogMode::Free {
                        reward += self.config.r_ask_free_nongoal;
                    }
                    if node.expects_reply() && !ep.goal.responses.contains_key(node.id.as_str()) {
                        let reply = self.user_reply(ep, &node.id)?;
                        if let Some(reply) = reply {
                            ep.goal.responses.insert(node.id.to_string(), reply.clone());
                            ep.last_utterance = reply.clone();
                            ep.replied_here = true;
                            record.utterance = Some(reply);
                        }
                    }
                }
            }
            Action::Skip(i) => {
                let answer = &node.answers[i];
                record.action = format!("skip:{}", answer.id);
                ep.asked_here = false;
                ep.replied_here = false;
                match self.forward(answer.target.clone(), &ep.collected) {
                    None => {
                        reward += self.config.r_wrong_step;
                        ep.done = true;
                    }
                    Some(landing) => {
                        let correct = ep.remaining.contains(&landing);
                        info.correct_transition = correct;
                        reward += if correct {
                            self.config.r_correct_step
                        } else {
                            self.config.r_wrong_step
                        };
                        ep.current = landing;
                        let values = self.effective_assignments(ep);
                        match self.graph.shortest_path_from(&ep.current, &ep.goal.goal, &values) {
                            Ok(path) => {
                                let mut nodes = self.graph.trajectory_nodes(&path, &ep.goal.goal);
                                nodes.remove(0);
                                ep.remaining = nodes;
                            }
                            Err(GraphError::UnreachableGoal(_)) => {
                                ep.remaining.clear();
                                ep.done = true;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        }

        if !ep.done && ep.turn >= self.config.max_turns {
            ep.done = true;
        }
        record.reward = reward;
        Ok((reward, info, record))
    }

    /// The user's answer at an input node, consistent with the way to the goal.
    fn user_reply(&mut self, ep: &mut EpisodeState, at: &NodeId) -> Result<Option<String>, SimError> {
        let node = self.graph.node(at).expect("current node exists").clone();
        if let (NodeKind::Variable, Some(spec)) = (node.kind, &node.variable) {
            let value = ep.goal.assignments.get(&spec.name).cloned();
            return Ok(value.map(|v| {
                ep.collected.insert(spec.name.clone(), v.clone());
                v.to_string()
            }));
        }
        let values = self.effective_assignments(ep);
        let path = self.graph.shortest_path_from(at, &ep.goal.goal, &values)?;
        Ok(match path.first() {
            Some((_, Step::Answer { index, .. })) => {
                let answer = node.answers[*index].clone();
                Some(self.reply_for(&answer))
            }
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::HashedNGramEncoder;
    use crate::graph::{parse_graph, BankEntry, Provenance};

    // s -> q(question: a -> x, b -> y); x -> x2 -> x3 -> x4 -> x5 (info chain)
    const GRAPH: &str = r#"{
      "start": "s",
      "nodes": [
        {"id": "s", "kind": "start", "text": "Welcome", "answers": [{"id": "s0", "text": "go", "target": "q"}]},
        {"id": "q", "kind": "question", "text": "Travel by train or plane?", "answers": [
          {"id": "qa", "text": "train", "target": "x"}, {"id": "qb", "text": "plane", "target": "y"}]},
        {"id": "x", "kind": "info", "text": "Rail tickets are refunded.", "answers": [{"id": "x0", "text": "more", "target": "x2"}]},
        {"id": "x2", "kind": "info", "text": "Book second class.", "answers": [{"id": "x20", "text": "more", "target": "x3"}]},
        {"id": "x3", "kind": "info", "text": "Keep the receipt.", "answers": [{"id": "x30", "text": "more", "target": "x4"}]},
        {"id": "x4", "kind": "info", "text": "Submit within a month.", "answers": [{"id": "x40", "text": "more", "target": "x5"}]},
        {"id": "x5", "kind": "info", "text": "Done with rail."},
        {"id": "y", "kind": "info", "text": "Flights need approval."}
      ]
    }"#;

    fn split() -> DatasetSplit {
        let mut s = DatasetSplit::default();
        for (node, q) in [("q", "which transport?"), ("x", "are train tickets refunded?"), ("x2", "what class?"),
            ("x3", "receipt needed?"), ("x4", "deadline?"), ("x5", "rail done?"), ("y", "can I fly?")] {
            s.questions.insert(node.into(), vec![BankEntry::plain(q)]);
        }
        s.paraphrases.insert(
            "qa".into(),
            vec![BankEntry {
                text: "rail".into(),
                provenance: Some(Provenance { method: "B".into(), model: "m".into(), timestamp: None }),
            }],
        );
        s
    }

    fn sim(config: SimulatorConfig, seed: u64) -> Simulator<f64> {
        let graph = Arc::new(parse_graph(GRAPH).unwrap());
        let cache = Arc::new(EncoderCache::new(Arc::new(HashedNGramEncoder::default())));
        Simulator::new(graph, Arc::new(split()), default_openers().into(), cache, config, seed).unwrap()
    }

    fn skip_first(s: &mut Simulator<f64>, n: usize) -> f64 {
        (0..n).map(|_| s.step(Action::Skip(0)).unwrap().reward).sum()
    }

    #[test]
    fn openers_ship_ten_lines() {
        assert_eq!(default_openers().len(), 10);
    }

    #[test]
    fn all_correct_moves_without_goal_ask_fail() {
        let mut s = sim(SimulatorConfig { max_turns: 6, ..Default::default() }, 1);
        s.reset_with(NodeId::new("x5"), DialogMode::Free).unwrap();
        let r = skip_first(&mut s, 6);
        assert_eq!(r, 6.0);
        let ep = s.episode().unwrap();
        assert!(ep.done);
        assert!(!ep.success);
        assert_eq!(ep.current.as_str(), "x5");
        assert_eq!(perceived_length(s.transcript()), 0);
    }

    #[test]
    fn goal_ask_ends_with_goal_reward() {
        let mut s = sim(SimulatorConfig::default(), 1);
        s.reset_with(NodeId::new("q"), DialogMode::Free).unwrap();
        let step = s.step(Action::Skip(0)).unwrap();
        assert_eq!(step.reward, 1.0);
        assert!(!step.done);
        assert!(step.info.correct_transition);
        let step = s.step(Action::Ask).unwrap();
        assert!(step.done && step.info.reached_goal);
        assert_eq!(step.reward, 30.0);
        assert!(step.observation.is_none());
        assert!(matches!(s.step(Action::Ask), Err(SimError::EpisodeDone)));
    }

    #[test]
    fn telescoping_reward() {
        for mode in [DialogMode::Guided, DialogMode::Free] {
            let mut s = sim(SimulatorConfig::default(), 3);
            let (_, goal) = s.reset_with(NodeId::new("x3"), mode).unwrap();
            let moves = goal.trajectory.len();
            let mut total = 0.0;
            let mut asks = 0;
            for (_, step) in &goal.trajectory {
                total += s.step(Action::Ask).unwrap().reward;
                asks += 1;
                let Step::Answer { index, .. } = step else { unreachable!() };
                total += s.step(Action::Skip(*index)).unwrap().reward;
            }
            let last = s.step(Action::Ask).unwrap();
            assert!(last.done && last.info.reached_goal);
            total += last.reward;
            let ask_terms = if mode == DialogMode::Free { -0.5 * asks as f64 } else { 0.0 };
            assert_eq!(total, moves as f64 * 1.0 + 30.0 + ask_terms);
            assert_eq!(perceived_length(s.transcript()), moves + 1);
        }
    }

    #[test]
    fn wrong_branch_into_dead_subtree_fails() {
        let mut s = sim(SimulatorConfig::default(), 2);
        s.reset_with(NodeId::new("y"), DialogMode::Guided).unwrap();
        s.step(Action::Skip(0)).unwrap();
        let r = s.step(Action::Skip(0)).unwrap();
        assert_eq!(r.reward, -1.0);
        assert!(r.done);
        assert!(!s.episode().unwrap().success);
    }

    #[test]
    fn reply_follows_trajectory() {
        for seed in 0..20 {
            let mut s = sim(SimulatorConfig::default(), seed);
            s.reset_with(NodeId::new("x2"), DialogMode::Guided).unwrap();
            s.step(Action::Skip(0)).unwrap();
            let step = s.step(Action::Ask).unwrap();
            let obs = step.observation.unwrap();
            assert!(["train", "rail"].contains(&&*obs.last_text));
            assert!(obs.replied_here && obs.asked_here);
        }
    }

    #[test]
    fn masked_action_rejected() {
        let mut s = sim(SimulatorConfig::default(), 2);
        s.reset_with(NodeId::new("y"), DialogMode::Guided).unwrap();
        assert!(matches!(s.step(Action::Skip(4)), Err(SimError::MaskedAction(5))));
    }

    #[test]
    fn asking_start_forever_fails_and_shows_every_turn() {
        let mut s = sim(SimulatorConfig::default(), 2);
        s.reset_with(NodeId::new("y"), DialogMode::Guided).unwrap();
        let mut done = false;
        while !done {
            done = s.step(Action::Ask).unwrap().done;
        }
        assert!(!s.episode().unwrap().success);
        assert_eq!(perceived_length(s.transcript()), 50);
    }

    #[test]
    fn same_seed_same_episode() {
        let run = |seed| {
            let mut s = sim(SimulatorConfig::default(), seed);
            let mut out = Vec::new();
            for _ in 0..5 {
                let (obs, goal) = s.reset().unwrap();
                out.push((goal, obs.initial_text.to_string()));
                let mut done = false;
                while !done {
                    let r = s.step(Action::Skip(0)).or_else(|_| s.step(Action::Ask)).unwrap();
                    done = r.done;
                }
                out.push((s.episode().unwrap().goal.clone(), format!("{:?}", s.transcript())));
            }
            out
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn observation_mask_and_scalars() {
        let mut s = sim(SimulatorConfig::default(), 4);
        let (obs, _) = s.reset_with(NodeId::new("y"), DialogMode::Free).unwrap();
        assert_eq!(obs.mask, vec![true, true]);
        assert_eq!(obs.turn, 0);
        assert_eq!(&*obs.initial_text, "can I fly?");
        assert_eq!(obs.last_text, obs.initial_text);
        let obs = s.step(Action::Skip(0)).unwrap().observation.unwrap();
        assert_eq!(obs.mask.len(), 3);
        assert_eq!(obs.scalars(), [1.0 / 50.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn snapshot_resumes_identically() {
        let mut a = sim(SimulatorConfig::default(), 5);
        a.reset().unwrap();
        a.step(Action::Skip(0)).unwrap();
        let snap: SimulatorSnapshot = serde_json::from_str(&serde_json::to_string(&a.snapshot()).unwrap()).unwrap();
        let mut b = sim(SimulatorConfig::default(), 99);
        b.restore(snap);
        assert_eq!(a.observe().unwrap(), b.observe().unwrap());
        for _ in 0..3 {
            a.reset().unwrap();
            b.reset().unwrap();
            assert_eq!(a.episode(), b.episode());
        }
    }

    #[test]
    fn transcript_jsonl() {
        let mut s = sim(SimulatorConfig::default(), 6);
        s.reset_with(NodeId::new("q"), DialogMode::Guided).unwrap();
        s.step(Action::Skip(0)).unwrap();
        s.step(Action::Ask).unwrap();
        let mut buf = Vec::new();
        write_transcript_jsonl(s.transcript(), &mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["action"], "ask");
        assert_eq!(lines[1]["shown"], true);
        assert_eq!(lines[0]["mode"], "guided");
    }
}
