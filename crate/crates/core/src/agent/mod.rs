//! Munchausen DQN agent with a dialog-mode prediction head.

mod loss;
mod metrics;
mod munchausen;
mod network;
mod optim;
mod replay;
mod schedule;
mod trainer;

pub use loss::{loss, loss_with_targets, munchausen_targets, LossConfig};
pub use metrics::{mode_prediction_metrics, EpisodeModes, ModeMetrics};
pub use munchausen::{log_policy_bonus, log_softmax, munchausen_target, soft_value, MunchausenParams};
pub use network::{
    argmax, predicted_mode, ActionForward, Grads, NetworkConfig, QNetwork, StateForward, Tensor,
    SIM_FEATURES,
};
pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::epsilon;
pub use trainer::{
    write_curve_csv, BestModel, Checkpoint, CurvePoint, ReplaySnapshot, StoredObservation,
    StoredTransition, Trainer, TrainerConfig, CHECKPOINT_VERSION,
};

use crate::simulator::SimError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("every action is masked")]
    AllMasked,
    #[error("action {0} is masked or out of range")]
    MaskedAction(usize),
    #[error("non-finite {what} for batch sample {sample}")]
    NonFinite { sample: usize, what: &'static str },
    #[error("training diverged: {steps} consecutive non-finite losses")]
    Diverged { steps: usize },
    #[error("parameter shapes do not match the network configuration")]
    ShapeMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Encode(#[from] crate::encoding::EncodeError),
    #[error("evaluation: {0}")]
    Eval(String),
}

impl From<crate::eval::EvalError> for AgentError {
    fn from(e: crate::eval::EvalError) -> Self {
        match e {
            crate::eval::EvalError::Agent(a) => a,
            crate::eval::EvalError::Sim(s) => AgentError::Sim(s),
            other => AgentError::Eval(other.to_string()),
        }
    }
}
