//! Run configuration, command implementations, evaluation harness and the
//! study session service.

pub mod api;
pub mod commands;
pub mod config;
pub mod live;
pub mod run;
pub mod session;

pub use config::{ConfigError, ConfigIssue, RunConfig};
