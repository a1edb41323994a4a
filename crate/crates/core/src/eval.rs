//! Greedy evaluation of dialog policies against the simulated user.

use std::sync::Arc;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{mode_prediction_metrics, AgentError, EpisodeModes, QNetwork};
use crate::graph::{DialogGraph, NodeKind, Step};
use crate::simulator::{perceived_length, Action, DialogMode, Observation, SimError, Simulator, UserGoal};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("evaluation needs at least two dialogs, got {0}")]
    TooFewDialogs(usize),
}

/// One agent decision: an index into the action mask, optionally with the
/// predicted dialog mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: usize,
    pub mode: Option<DialogMode>,
}

pub trait Policy<T: Scalar> {
    /// Called after each reset. Only privileged policies should look at the goal.
    fn on_episode_start(&mut self, _goal: &UserGoal) {}

    fn act(&mut self, obs: &Observation<T>) -> Result<Decision, EvalError>;
}

/// ε = 0 action selection with the network's mode prediction.
pub struct GreedyPolicy<'a, T> {
    pub net: &'a QNetwork<T>,
}

impl<T: Scalar> Policy<T> for GreedyPolicy<'_, T> {
    fn act(&mut self, obs: &Observation<T>) -> Result<Decision, EvalError> {
        let (action, mode) = self.net.act_greedy(obs)?;
        Ok(Decision {
            action,
            mode: Some(mode),
        })
    }
}

/// Uniformly random legal actions.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<T: Scalar> Policy<T> for RandomPolicy {
    fn act(&mut self, obs: &Observation<T>) -> Result<Decision, EvalError> {
        let action = obs.legal_actions().choose(&mut self.rng).ok_or(AgentError::AllMasked)?;
        Ok(Decision { action, mode: None })
    }
}

/// Follows the goal's trajectory. In guided mode it shows every node on the
/// way; in free mode only variable prompts and the goal.
pub struct OraclePolicy {
    graph: Arc<DialogGraph>,
    plan: Vec<(usize, bool)>,
    pos: usize,
    asked: bool,
    mode: Option<DialogMode>,
}

impl OraclePolicy {
    pub fn new(graph: Arc<DialogGraph>) -> Self {
        OraclePolicy {
            graph,
            plan: Vec::new(),
            pos: 0,
            asked: false,
            mode: None,
        }
    }
}

impl<T: Scalar> Policy<T> for OraclePolicy {
    fn on_episode_start(&mut self, goal: &UserGoal) {
        // logic nodes forward on their own, so only answer steps need an action
        self.plan = goal
            .trajectory
            .iter()
            .filter_map(|(node, step)| match step {
                Step::Answer { index, .. } => {
                    let variable = self.graph.node(node).is_some_and(|n| n.kind == NodeKind::Variable);
                    Some((*index, variable || goal.mode == DialogMode::Guided))
                }
                Step::Branch(_) => None,
            })
            .collect();
        self.pos = 0;
        self.asked = false;
        self.mode = Some(goal.mode);
    }

    fn act(&mut self, _obs: &Observation<T>) -> Result<Decision, EvalError> {
        let at_goal = self.pos >= self.plan.len();
        let must_ask = at_goal || self.plan[self.pos].1;
        let action = if must_ask && !self.asked {
            self.asked = true;
            Action::Ask
        } else {
            let index = self.plan[self.pos].0;
            self.pos += 1;
            self.asked = false;
            Action::Skip(index)
        };
        Ok(Decision {
            action: action.index(),
            mode: self.mode,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub goal: String,
    pub mode: DialogMode,
    pub success: bool,
    pub turns: usize,
    pub perceived_length: usize,
    pub reward: f64,
    pub mode_predictions: Vec<DialogMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dialogs: usize,
    pub success_guided: f64,
    pub success_free: f64,
    /// Mean of the guided and free success rates.
    pub success_combined: f64,
    pub avg_perceived_length_guided: f64,
    pub avg_perceived_length_free: f64,
    pub mode_f1: Option<f64>,
    pub mode_consistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub episodes: Vec<EpisodeOutcome>,
}

impl EvalReport {
    /// Builds the aggregate from per-episode outcomes.
    pub fn from_episodes(episodes: Vec<EpisodeOutcome>) -> Self {
        let stats = |mode: DialogMode| {
            let eps: Vec<&EpisodeOutcome> = episodes.iter().filter(|e| e.mode == mode).collect();
            if eps.is_empty() {
                return (0.0, 0.0);
            }
            let n = eps.len() as f64;
            (
                eps.iter().filter(|e| e.success).count() as f64 / n,
                eps.iter().map(|e| e.perceived_length as f64).sum::<f64>() / n,
            )
        };
        let (success_guided, avg_perceived_length_guided) = stats(DialogMode::Guided);
        let (success_free, avg_perceived_length_free) = stats(DialogMode::Free);
        let modes: Vec<EpisodeModes> = episodes
            .iter()
            .filter(|e| !e.mode_predictions.is_empty())
            .map(|e| EpisodeModes {
                truth: e.mode,
                predictions: e.mode_predictions.clone(),
            })
            .collect();
        let metrics = (!modes.is_empty()).then(|| mode_prediction_metrics(&modes));
        EvalReport {
            dialogs: episodes.len(),
            success_guided,
            success_free,
            success_combined: (success_guided + success_free) / 2.0,
            avg_perceived_length_guided,
            avg_perceived_length_free,
            mode_f1: metrics.map(|m| m.f1),
            mode_consistency: metrics.map(|m| m.consistency),
            episodes,
        }
    }

    pub fn without_episodes(mut self) -> Self {
        self.episodes.clear();
        self
    }

    pub fn to_text_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"));
        format!(
            "dialogs                         {}\n\
             success (guided)                {:.3}\n\
             success (free)                  {:.3}\n\
             success (combined)              {:.3}\n\
             avg perceived length (guided)   {:.2}\n\
             avg perceived length (free)     {:.2}\n\
             mode prediction F1              {}\n\
             mode prediction consistency     {}\n",
            self.dialogs,
            self.success_guided,
            self.success_free,
            self.success_combined,
            self.avg_perceived_length_guided,
            self.avg_perceived_length_free,
            opt(self.mode_f1),
            opt(self.mode_consistency),
        )
    }
}

/// Plays one episode in `mode` to the end.
pub fn run_episode<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &mut P,
    env: &mut Simulator<T>,
    mode: DialogMode,
) -> Result<EpisodeOutcome, EvalError> {
    let (mut obs, goal) = env.reset_in_mode(mode)?;
    policy.on_episode_start(&goal);
    let mut reward = 0.0;
    let mut predictions = Vec::new();
    loop {
        let decision = policy.act(&obs)?;
        predictions.extend(decision.mode);
        let step = env.step(Action::from_index(decision.action))?;
        reward += step.reward;
        match step.observation {
            Some(next) if !step.done => obs = next,
            _ => break,
        }
    }
    let ep = env.episode().expect("episode just played");
    Ok(EpisodeOutcome {
        goal: goal.goal.to_string(),
        mode,
        success: ep.success,
        turns: ep.turn,
        perceived_length: perceived_length(env.transcript()),
        reward,
        mode_predictions: predictions,
    })
}

/// Runs `dialogs / 2` guided and `dialogs - dialogs / 2` free episodes,
/// alternating modes.
pub fn evaluate<T: Scalar, P: Policy<T> + ?Sized>(
    policy: &mut P,
    env: &mut Simulator<T>,
    dialogs: usize,
) -> Result<EvalReport, EvalError> {
    if dialogs < 2 {
        return Err(EvalError::TooFewDialogs(dialogs));
    }
    let mut episodes = Vec::with_capacity(dialogs);
    for i in 0..dialogs {
        let mode = if i % 2 == 0 { DialogMode::Guided } else { DialogMode::Free };
        episodes.push(run_episode(policy, env, mode)?);
    }
    Ok(EvalReport::from_episodes(episodes))
}
