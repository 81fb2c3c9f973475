//! Decentralized anytime heuristic for weighted matching, with exact
//! baselines, an on-line ride-sharing simulator and Markov-chain checks.

pub mod backoff;
pub mod baselines;
pub mod cli;
pub mod engine;
pub mod error;
pub mod instance;
pub mod online;
pub mod report;
pub mod rng;
pub mod theory;

pub use backoff::BackoffPolicy;
pub use error::{AlmaError, Result};
pub use instance::{Matching, MatchingInstance, ScenarioConfig, ScenarioKind};
