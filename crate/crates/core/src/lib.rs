//! Self-reflection data pipeline for chat-completion models.
//!
//! The crate generates reflections on failed reasoning attempts, curates
//! them into supervised and preference datasets, exports training files and
//! evaluates reflect-and-correct rollouts over multiple turns.

pub mod config;
pub mod curation;
pub mod eval;
pub mod export;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod pool;
pub mod prompts;
pub mod rollout;
pub mod util;
pub mod verify;

pub use config::Config;
pub use curation::{Judge, PairingMode, PairingPolicy};
pub use eval::EvalReport;
pub use export::{DpoRecord, Exporter, Setting, SftRecord};
pub use gateway::{CompletionRequest, CompletionResult, Gateway, GatewayError};
pub use model::*;
pub use pipeline::{curate, export_all, generate, Curated, GenerateOutput};
pub use pool::{InstructionPool, InstructionSpec};
pub use prompts::PromptSet;
pub use rollout::{extract_answer, ReflectionMode, RolloutEngine, RolloutError};
pub use verify::{verify_oracle, OracleVerifier, Verifier};
