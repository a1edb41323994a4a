use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_with_targets, munchausen_targets, LossConfig};
use super::munchausen::MunchausenParams;
use super::network::{NetworkConfig, QNetwork};
use super::optim::{clip_grad_norm, Adam};
use super::replay::{ReplayBuffer, Transition};
use super::schedule::epsilon;
use super::AgentError;
use crate::encoding::EncoderCache;
use crate::eval::{evaluate, EvalReport, GreedyPolicy};
use crate::simulator::{Action, DialogMode, EnvFactory, Observation, SimulatorConfig, SimulatorSnapshot};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Weight of the mode-prediction loss.
    pub mode_loss_weight: f64,
    /// Dialog turns to train for.
    pub total_turns: u64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Share of `total_turns` over which ε decays.
    pub exploration_fraction: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// One gradient step every this many turns.
    pub train_frequency: u64,
    /// Turns collected before the first gradient step.
    pub learning_starts: u64,
    /// Gradient steps between hard target-network copies.
    pub target_update_interval: u64,
    pub q_clip: f64,
    pub munchausen_tau: f64,
    pub munchausen_alpha: f64,
    pub log_policy_clip: f64,
    pub eval_frequency: u64,
    pub eval_dialogs: usize,
    pub replay_capacity: usize,
    /// Abort after this many consecutive non-finite losses.
    pub divergence_patience: usize,
    /// Multiplies environment rewards before they enter the replay buffer,
    /// so that returns stay inside the target clamp.
    pub reward_scale: f64,
    pub network: NetworkConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 1e-4,
            mode_loss_weight: 0.1,
            total_turns: 2_000_000,
            grad_clip: 1.0,
            batch_size: 256,
            gamma: 0.99,
            exploration_fraction: 0.99,
            epsilon_start: 0.6,
            epsilon_end: 0.0,
            train_frequency: 3,
            learning_starts: 1280,
            target_update_interval: 15,
            q_clip: 10.0,
            munchausen_tau: 0.03,
            munchausen_alpha: 0.9,
            log_policy_clip: -1.0,
            eval_frequency: 10_000,
            eval_dialogs: 500,
            replay_capacity: 100_000,
            divergence_patience: 10,
            reward_scale: 0.1,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Field-level problems, as `(field, message)` pairs.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errors = Vec::new();
        let mut positive = |name: &str, ok: bool| {
            if !ok {
                errors.push((name.to_owned(), "must be positive".to_owned()));
            }
        };
        positive("learning_rate", self.learning_rate > 0.0);
        positive("total_turns", self.total_turns > 0);
        positive("grad_clip", self.grad_clip > 0.0);
        positive("batch_size", self.batch_size > 0);
        positive("train_frequency", self.train_frequency > 0);
        positive("target_update_interval", self.target_update_interval > 0);
        positive("q_clip", self.q_clip > 0.0);
        positive("munchausen_tau", self.munchausen_tau > 0.0);
        positive("eval_frequency", self.eval_frequency > 0);
        positive("replay_capacity", self.replay_capacity > 0);
        positive("divergence_patience", self.divergence_patience > 0);
        positive("reward_scale", self.reward_scale > 0.0);
        positive("network.embedding_dim", self.network.embedding_dim > 0);
        positive("network.hidden1", self.network.hidden1 > 0);
        positive("network.hidden2", self.network.hidden2 > 0);
        positive("network.action_dim", self.network.action_dim > 0);
        positive("network.head_hidden", self.network.head_hidden > 0);
        if self.eval_dialogs < 2 {
            errors.push(("eval_dialogs".into(), "must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errors.push(("gamma".into(), "must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            errors.push(("exploration_fraction".into(), "must lie in [0, 1]".into()));
        }
        if self.mode_loss_weight < 0.0 {
            errors.push(("mode_loss_weight".into(), "must not be negative".into()));
        }
        if self.munchausen_alpha < 0.0 {
            errors.push(("munchausen_alpha".into(), "must not be negative".into()));
        }
        if self.log_policy_clip > 0.0 {
            errors.push(("log_policy_clip".into(), "must not be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            errors.push(("epsilon_start".into(), "ε values must lie in [0, 1]".into()));
        } else if self.epsilon_end > self.epsilon_start {
            errors.push(("epsilon_end".into(), "must not exceed epsilon_start".into()));
        }
        errors
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            munchausen: MunchausenParams {
                gamma: self.gamma,
                tau: self.munchausen_tau,
                alpha: self.munchausen_alpha,
                log_policy_clip: self.log_policy_clip,
                q_clip: self.q_clip,
            },
            mode_weight: self.mode_loss_weight,
            huber_delta: 1.0,
        }
    }
}

/// One evaluation during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub turn: u64,
    /// Mean training loss since the previous point.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub success_guided: f64,
    pub success_free: f64,
    pub success_combined: f64,
    pub mode_f1: Option<f64>,
    pub mode_consistency: Option<f64>,
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<(), AgentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AgentError::Io(e.to_string()))?;
    w.write_record(["turn", "loss", "success_guided", "success_free", "success_combined", "f1", "consistency", "epsilon"])
        .map_err(|e| AgentError::Io(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in curve {
        w.write_record([
            p.turn.to_string(),
            opt(p.loss),
            p.success_guided.to_string(),
            p.success_free.to_string(),
            p.success_combined.to_string(),
            opt(p.mode_f1),
            opt(p.mode_consistency),
            p.epsilon.to_string(),
        ])
        .map_err(|e| AgentError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| AgentError::Io(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestModel<T> {
    pub turn: u64,
    pub report: EvalReport,
    pub network: QNetwork<T>,
}

pub struct Trainer<T: Scalar> {
    config: TrainerConfig,
    seed: u64,
    factory: EnvFactory<T>,
    env: crate::simulator::Simulator<T>,
    online: QNetwork<T>,
    target: QNetwork<T>,
    adam: Adam<T>,
    replay: ReplayBuffer<T>,
    rng: ChaCha8Rng,
    turn: u64,
    train_steps: u64,
    obs: Option<(Observation<T>, DialogMode)>,
    loss_sum: f64,
    loss_count: u64,
    nonfinite_streak: usize,
    curve: Vec<CurvePoint>,
    best: Option<BestModel<T>>,
}

/// Offset between the training seed and the fixed evaluation seed.
const EVAL_SEED_OFFSET: u64 = 0x0E7A_1000;

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainerConfig, factory: EnvFactory<T>, seed: u64) -> Result<Self, AgentError> {
        let problems = config.validate();
        if let Some((field, msg)) = problems.first() {
            return Err(AgentError::Config(format!("{field}: {msg}")));
        }
        if config.network.embedding_dim != factory.cache.dim() {
            return Err(AgentError::Config(format!(
                "network.embedding_dim: {} does not match encoder dimension {}",
                config.network.embedding_dim,
                factory.cache.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(config.network.clone(), &mut rng);
        let env = factory.train_env(seed)?;
        Ok(Trainer {
            adam: Adam::new(config.learning_rate, &online.params),
            target: online.clone(),
            online,
            replay: ReplayBuffer::new(config.replay_capacity),
            env,
            factory,
            config,
            seed,
            rng,
            turn: 0,
            train_steps: 0,
            obs: None,
            loss_sum: 0.0,
            loss_count: 0,
            nonfinite_streak: 0,
            curve: Vec::new(),
            best: None,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn turn(&self) -> u64 {
        self.turn
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn online(&self) -> &QNetwork<T> {
        &self.online
    }

    pub fn target(&self) -> &QNetwork<T> {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer<T> {
        &self.replay
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn best(&self) -> Option<&BestModel<T>> {
        self.best.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        epsilon(self.turn, c.total_turns, c.exploration_fraction, c.epsilon_start, c.epsilon_end)
    }

    /// One environment turn, plus a gradient step and an evaluation when due.
    pub fn step(&mut self) -> Result<(), AgentError> {
        let (obs, mode) = match self.obs.take() {
            Some(o) => o,
            None => {
                let (o, goal) = self.env.reset()?;
                (o, goal.mode)
            }
        };
        let eps = self.epsilon();
        let explore = self.rng.gen::<f64>() < eps;
        let action = if explore {
            obs.legal_actions().choose(&mut self.rng).ok_or(AgentError::AllMasked)?
        } else {
            self.online.act_greedy(&obs)?.0
        };
        let result = self.env.step(Action::from_index(action))?;
        self.obs = match (&result.observation, result.done) {
            (Some(next), false) => Some((next.clone(), mode)),
            _ => None,
        };
        self.replay.push(Transition {
            obs,
            action,
            reward: T::of(result.reward * self.config.reward_scale),
            next: result.observation,
            done: result.done,
            mode,
        });
        self.turn += 1;

        let c = &self.config;
        if self.turn >= c.learning_starts && self.turn % c.train_frequency == 0 {
            self.train_step()?;
        }
        if self.turn % self.config.eval_frequency == 0 {
            self.evaluate_and_record()?;
        }
        Ok(())
    }

    fn train_step(&mut self) -> Result<(), AgentError> {
        let loss_config = self.config.loss_config();
        let batch = self.replay.sample(self.config.batch_size, &mut self.rng);
        let mut grads = self.online.zero_grads();
        let outcome = munchausen_targets(&batch, &self.target, &loss_config.munchausen)
            .and_then(|targets| loss_with_targets(&self.online, &batch, &targets, &loss_config, Some(&mut grads)));
        let grads_finite = grads.iter().flatten().all(|g| g.is_finite());
        match outcome {
            Ok(loss) if loss.is_finite() && grads_finite => {
                clip_grad_norm(&mut grads, self.config.grad_clip);
                self.adam.update(&mut self.online.params, &grads);
                self.nonfinite_streak = 0;
                self.loss_sum += loss.as_f64();
                self.loss_count += 1;
            }
            Ok(_) | Err(AgentError::NonFinite { .. }) => {
                self.nonfinite_streak += 1;
                log::warn!("non-finite loss at turn {} ({} in a row)", self.turn, self.nonfinite_streak);
                if self.nonfinite_streak >= self.config.divergence_patience {
                    return Err(AgentError::Diverged {
                        steps: self.nonfinite_streak,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        self.train_steps += 1;
        if self.train_steps % self.config.target_update_interval == 0 {
            self.target.params.clone_from(&self.online.params);
        }
        Ok(())
    }

    /// Greedy evaluation of the current online network on the test split.
    pub fn evaluate_online(&self) -> Result<EvalReport, AgentError> {
        let mut env = self.factory.eval_env(self.seed.wrapping_add(EVAL_SEED_OFFSET))?;
        let mut policy = GreedyPolicy { net: &self.online };
        Ok(evaluate(&mut policy, &mut env, self.config.eval_dialogs)?)
    }

    fn evaluate_and_record(&mut self) -> Result<(), AgentError> {
        let report = self.evaluate_online()?.without_episodes();
        let point = CurvePoint {
            turn: self.turn,
            loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
            epsilon: self.epsilon(),
            success_guided: report.success_guided,
            success_free: report.success_free,
            success_combined: report.success_combined,
            mode_f1: report.mode_f1,
            mode_consistency: report.mode_consistency,
        };
        log::info!(
            "turn {}: combined success {:.3} (guided {:.3}, free {:.3}), loss {:?}, eps {:.3}",
            point.turn,
            point.success_combined,
            point.success_guided,
            point.success_free,
            point.loss,
            point.epsilon
        );
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.curve.push(point);
        if self.best.as_ref().is_none_or(|b| report.success_combined > b.report.success_combined) {
            self.best = Some(BestModel {
                turn: self.turn,
                report,
                network: self.online.clone(),
            });
        }
        Ok(())
    }

    /// Runs until `turn` (capped at `total_turns`).
    pub fn run_until(&mut self, turn: u64) -> Result<(), AgentError> {
        let stop = turn.min(self.config.total_turns);
        while self.turn < stop {
            self.step()?;
        }
        Ok(())
    }

    /// Trains for the configured number of turns. A final evaluation is
    /// added when the last turn does not fall on the evaluation grid.
    pub fn run(&mut self) -> Result<(), AgentError> {
        self.run_until(self.config.total_turns)?;
        if self.curve.last().is_none_or(|p| p.turn != self.turn) {
            self.evaluate_and_record()?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            simulator: self.factory.config.clone(),
            online: self.online.clone(),
            target: self.target.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
            env: self.env.snapshot(),
            turn: self.turn,
            train_steps: self.train_steps,
            loss_sum: self.loss_sum,
            loss_count: self.loss_count,
            nonfinite_streak: self.nonfinite_streak,
            curve: self.curve.clone(),
            best: self.best.clone(),
            replay: ReplaySnapshot::capture(&self.replay),
        }
    }

    /// Rebuilds a trainer mid-run. `factory` must describe the same dataset
    /// and encoder the checkpoint was trained with.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, factory: EnvFactory<T>) -> Result<Self, AgentError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        if ckpt.config.network.embedding_dim != factory.cache.dim() {
            return Err(AgentError::ShapeMismatch);
        }
        let online = QNetwork::from_params(ckpt.config.network.clone(), ckpt.online.params)?;
        let target = QNetwork::from_params(ckpt.config.network.clone(), ckpt.target.params)?;
        let mut env = factory.train_env(ckpt.seed)?;
        env.restore(ckpt.env);
        let obs = match env.episode() {
            Some(ep) if !ep.done => Some((env.observe()?, ep.goal.mode)),
            _ => None,
        };
        let replay = ckpt.replay.restore(&factory.cache)?;
        Ok(Trainer {
            config: ckpt.config,
            seed: ckpt.seed,
            factory,
            env,
            online,
            target,
            adam: ckpt.adam,
            replay,
            rng: ckpt.rng,
            turn: ckpt.turn,
            train_steps: ckpt.train_steps,
            obs,
            loss_sum: ckpt.loss_sum,
            loss_count: ckpt.loss_count,
            nonfinite_streak: ckpt.nonfinite_streak,
            curve: ckpt.curve,
            best: ckpt.best,
        })
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Full training state: parameters, optimizer moments, RNG and environment
/// state, counters, replay contents and the learning curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub seed: u64,
    pub config: TrainerConfig,
    pub simulator: SimulatorConfig,
    pub online: QNetwork<T>,
    pub target: QNetwork<T>,
    pub adam: Adam<T>,
    pub rng: ChaCha8Rng,
    pub env: SimulatorSnapshot,
    pub turn: u64,
    pub train_steps: u64,
    pub loss_sum: f64,
    pub loss_count: u64,
    pub nonfinite_streak: usize,
    pub curve: Vec<CurvePoint>,
    pub best: Option<BestModel<T>>,
    pub replay: ReplaySnapshot<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let file = std::fs::File::create(path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let file = std::fs::File::open(path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    /// The network with the best evaluation, falling back to the latest one.
    pub fn policy_network(&self) -> &QNetwork<T> {
        self.best.as_ref().map_or(&self.online, |b| &b.network)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredObservation {
    pub initial: u32,
    pub last: u32,
    pub node: u32,
    pub answers: Vec<u32>,
    pub mask: Vec<bool>,
    pub turn: usize,
    pub shown: usize,
    pub max_turns: usize,
    pub asked_here: bool,
    pub replied_here: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTransition<T> {
    pub obs: StoredObservation,
    pub action: usize,
    pub reward: T,
    pub next: Option<StoredObservation>,
    pub done: bool,
    pub mode: DialogMode,
}

/// Replay contents with texts stored once; embeddings are recomputed on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplaySnapshot<T> {
    pub capacity: usize,
    pub texts: Vec<String>,
    pub items: Vec<StoredTransition<T>>,
}

impl<T: Scalar> ReplaySnapshot<T> {
    pub fn capture(buffer: &ReplayBuffer<T>) -> Self {
        let mut texts = Vec::new();
        let mut ids: HashMap<Arc<str>, u32> = HashMap::new();
        let mut id = |s: &Arc<str>| {
            *ids.entry(s.clone()).or_insert_with(|| {
                texts.push(s.to_string());
                (texts.len() - 1) as u32
            })
        };
        let mut store = |o: &Observation<T>| StoredObservation {
            initial: id(&o.initial_text),
            last: id(&o.last_text),
            node: id(&o.node_text),
            answers: o.answer_texts.iter().map(&mut id).collect(),
            mask: o.mask.clone(),
            turn: o.turn,
            shown: o.shown,
            max_turns: o.max_turns,
            asked_here: o.asked_here,
            replied_here: o.replied_here,
        };
        let items = buffer
            .iter()
            .map(|t| StoredTransition {
                obs: store(&t.obs),
                action: t.action,
                reward: t.reward,
                next: t.next.as_ref().map(&mut store),
                done: t.done,
                mode: t.mode,
            })
            .collect();
        ReplaySnapshot {
            capacity: buffer.capacity(),
            texts,
            items,
        }
    }

    pub fn restore(&self, cache: &EncoderCache<T>) -> Result<ReplayBuffer<T>, AgentError> {
        let shared: Vec<Arc<str>> = self.texts.iter().map(|s| Arc::from(s.as_str())).collect();
        let text = |i: u32| -> Result<Arc<str>, AgentError> {
            shared
                .get(i as usize)
                .cloned()
                .ok_or_else(|| AgentError::Checkpoint(format!("replay text id {i} out of range")))
        };
        let load = |s: &StoredObservation| -> Result<Observation<T>, AgentError> {
            let answer_texts = s.answers.iter().map(|&i| text(i)).collect::<Result<Vec<_>, _>>()?;
            let (initial_text, last_text, node_text) = (text(s.initial)?, text(s.last)?, text(s.node)?);
            Ok(Observation {
                initial: cache.get(&initial_text)?,
                last: cache.get(&last_text)?,
                node: cache.get(&node_text)?,
                answers: answer_texts.iter().map(|t| cache.get(t)).collect::<Result<_, _>>()?,
                initial_text,
                last_text,
                node_text,
                answer_texts,
                mask: s.mask.clone(),
                turn: s.turn,
                shown: s.shown,
                max_turns: s.max_turns,
                asked_here: s.asked_here,
                replied_here: s.replied_here,
            })
        };
        let mut buffer = ReplayBuffer::new(self.capacity);
        for t in &self.items {
            buffer.push(Transition {
                obs: load(&t.obs)?,
                action: t.action,
                reward: t.reward,
                next: t.next.as_ref().map(load).transpose()?,
                done: t.done,
                mode: t.mode,
            });
        }
        Ok(buffer)
    }
}
