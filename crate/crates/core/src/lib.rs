//! Bi-level context engineering for frozen LLM generators.
//!
//! A meta-level agent evolves *skills* (folders holding a `SKILL.md` and
//! optional scripts). A base-level agent executes the current skill against
//! training rollouts and writes a *context artifact*: a `context/` directory
//! plus an executable retrieval entrypoint that maps a question to the
//! context string fed to the generator. An elitist (1+1) loop keeps the
//! artifact with the best validation score.
//!
//! Module map:
//!
//! - [`model`]: shared domain types (task specs, splits, rollouts, skill records).
//! - [`template`]: `{placeholder}` rendering for generator templates and agent prompts.
//! - [`workspace`]: on-disk layout, warm-start copies and permission scopes.
//! - [`gateway`]: OpenAI-compatible chat/embedding client plus a scripted mock server.
//! - [`harness`]: the bounded tool-use loop (Read, Write, Edit, Bash, Glob, Grep, TodoWrite).
//! - [`rollout`]: retrieval protocol, answer parsers, metrics and rollouts.
//! - [`evolution`]: offline and online orchestration.
//! - [`config`], [`cli`], [`report`]: operator entry points.
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability; start with `cargo run -p mce --example parse_and_score`.

pub mod assets;
pub mod cli;
pub mod config;
pub mod demo;
pub mod evolution;
pub mod gateway;
pub mod harness;
pub mod model;
pub mod report;
pub mod rollout;
pub mod template;
pub mod workspace;

mod fsutil;

pub use evolution::{Evolution, OnlineOutcome, RunConfig, RunReport};
pub use gateway::{Gateway, GatewayConfig, GatewayError, ModelEndpoint};
pub use model::{
    ContextArtifact, DataInstance, DataSplit, MetricKind, MetricScore, ParserKind, RolloutRecord,
    RolloutSet, SkillDatabase, SkillRecord, SkillStatus, SplitKind, Target, TaskSpecification,
};
pub use workspace::{PermissionScope, WorkspaceLayout};
