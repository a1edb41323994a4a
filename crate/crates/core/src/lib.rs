//! Conversational tree search (CTS) from expert-authored dialog trees.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`graph`]: dialog tree schema, validation, statistics and trajectories.
//! * [`encoding`]: pluggable text encoders and cosine similarity.
//! * [`simulator`]: the reinforcement-learning environment (simulated user).
//! * [`agent`]: Munchausen DQN policy with a dialog-mode head, replay and training loop.
//! * [`datagen`]: LLM-prompted synthesis of user questions and answer paraphrases.
//! * [`quality`]: Self-BLEU, cross-similarity, answerability, t-tests and density export.
//! * [`eval`]: greedy evaluation harness producing success / length / mode metrics.
//!
//! Numeric cores are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! pin the common instantiations.

pub mod agent;
pub mod datagen;
pub mod encoding;
pub mod eval;
pub mod graph;
pub mod quality;
pub mod scalar;
pub mod simulator;

pub use scalar::Scalar;

/// Single-precision Q network, used for training runs.
pub type QNetworkF32 = agent::QNetwork<f32>;
/// Double-precision Q network, used for gradient checks and oracles.
pub type QNetworkF64 = agent::QNetwork<f64>;
pub type SimulatorF32 = simulator::Simulator<f32>;
pub type SimulatorF64 = simulator::Simulator<f64>;
pub type ObservationF32 = simulator::Observation<f32>;
pub type TrainerF32 = agent::Trainer<f32>;
pub type CheckpointF32 = agent::Checkpoint<f32>;
pub type EmbeddingF32 = encoding::EmbeddingVector<f32>;
pub type EmbeddingF64 = encoding::EmbeddingVector<f64>;
