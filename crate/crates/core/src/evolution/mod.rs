//! The elitist skill-evolution loop (offline) and the sequential online mode.

mod offline;
mod online;
pub mod summary;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use offline::{IterationRow, OfflineOutcome, RolloutTotals, RunReport};
pub use online::{OnlineOutcome, OnlineUpdate};
pub use summary::{summarize_db, FitThresholds, SkillSummary, SkillSummaryEntry, EMPTY_HISTORY};

use crate::gateway::Gateway;
use crate::harness::{
    base_bindings, meta_bindings, render_prompt, run_session, AgentSession, Clock, SandboxEnv, SessionLimits, SessionOutcome,
    SystemClock, Termination,
};
use crate::model::{ContextArtifact, ModelError, SkillDatabase, TaskSpecification};
use crate::rollout::{validate_artifact, RetrievalConfig, RetrievalProtocol, ValidationReport};
use crate::template::TemplateError;
use crate::workspace::{scope_for, validate_skill, AgentRole, WorkspaceError, WorkspaceLayout, SKILL_FILE, SKILL_SUBDIR};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("all {0} iterations failed; no artifact was produced")]
    AllFailed(u32),
    #[error("skill-invalid: {0}")]
    SkillInvalid(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineVariant {
    FixedSkill,
    NoSkill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Number of iterations K.
    pub iterations: u32,
    /// Split training data into sub-iterations of this many instances.
    pub batch_size: Option<usize>,
    pub mode: Mode,
    pub online_variant: OnlineVariant,
    /// Engineer after every `online_stride` processed instances.
    pub online_stride: usize,
    pub seed: u64,
    /// Training questions used to probe the entrypoint after engineering.
    pub probes: usize,
    pub thresholds: FitThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            batch_size: None,
            mode: Mode::Offline,
            online_variant: OnlineVariant::FixedSkill,
            online_stride: 1,
            seed: 0,
            probes: 3,
            thresholds: FitThresholds::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if self.iterations == 0 {
            return Err(EvolutionError::Config("iterations must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(EvolutionError::Config("batch_size must be >= 1".into()));
        }
        if self.online_stride == 0 {
            return Err(EvolutionError::Config("online_stride must be >= 1".into()));
        }
        if self.probes == 0 {
            return Err(EvolutionError::Config("probes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything one run needs: workspace, task, models and limits.
pub struct Evolution {
    pub layout: WorkspaceLayout,
    pub spec: TaskSpecification,
    pub generator: Gateway,
    pub agent: Gateway,
    pub config: RunConfig,
    pub limits: SessionLimits,
    pub retrieval: RetrievalConfig,
    pub env: SandboxEnv,
    pub clock: Arc<dyn Clock>,
}

impl Evolution {
    pub fn new(layout: WorkspaceLayout, spec: TaskSpecification, generator: Gateway, agent: Gateway, config: RunConfig) -> Self {
        Self {
            layout,
            spec,
            generator,
            agent,
            config,
            limits: SessionLimits::default(),
            retrieval: RetrievalConfig::default(),
            env: SandboxEnv::from_process(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn protocol(&self, artifact: &ContextArtifact) -> RetrievalProtocol {
        RetrievalProtocol::for_artifact(artifact, self.layout.base(), self.retrieval.clone(), self.env.clone())
    }

    fn session(&self, role: AgentRole, dir: &Path, system_prompt: String, kickoff: String, suffix: &str) -> Result<AgentSession, EvolutionError> {
        let dir_name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let name = format!("{dir_name}.{role}{suffix}");
        let cwd = match role {
            AgentRole::Meta => self.layout.base().to_path_buf(),
            AgentRole::Base => dir.to_path_buf(),
        };
        Ok(AgentSession {
            role,
            transcript_path: self.layout.transcripts_dir().join(format!("{name}.jsonl")),
            scratch_dir: self.layout.internal_dir().join("scratch"),
            name,
            system_prompt,
            kickoff,
            scope: scope_for(role, &self.layout, dir)?,
            cwd,
            limits: self.limits.clone(),
            env: self.env.clone(),
        })
    }

    async fn run(&self, session: &AgentSession) -> Result<SessionOutcome, EvolutionError> {
        let outcome = run_session(&self.agent, session, self.clock.clone()).await?;
        if let Termination::Fault(e) = &outcome.termination {
            tracing::warn!(session = %session.name, error = %e, "agent session ended on a fault");
        }
        Ok(outcome)
    }

    /// Meta-agent session writing `{dir}/.claude/skills/learning-context/`.
    /// One remediation session is granted when the skill does not validate.
    /// Returns the in-directory skill folder.
    pub async fn crossover(&self, db: &SkillDatabase, k: u32, dir: &Path) -> Result<PathBuf, EvolutionError> {
        let iter_name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let summary = summarize_db(db, self.layout.base(), self.config.thresholds).render();
        let bindings = meta_bindings(&self.spec.agent_brief(), &iter_name, self.layout.base(), &summary, k);
        let prompt = render_prompt(AgentRole::Meta, crate::assets::META_AGENT_PROMPT, &bindings)?;
        let target = format!("{iter_name}/{SKILL_SUBDIR}/{SKILL_FILE}");
        let kickoff = format!("Iteration {k}. Write the evolved skill to `{target}`. Finish when it is complete.");
        let skill_dir = dir.join(SKILL_SUBDIR);

        self.run(&self.session(AgentRole::Meta, dir, prompt.clone(), kickoff.clone(), "")?).await?;
        let Err(problem) = validate_skill(&skill_dir) else { return Ok(skill_dir) };
        let retry = format!("{kickoff}\n\nThe skill did not validate: {problem}. Fix `{target}`; it must contain a `## Skill Overview` section.");
        self.run(&self.session(AgentRole::Meta, dir, prompt, retry, ".retry")?).await?;
        validate_skill(&skill_dir).map_err(EvolutionError::SkillInvalid)?;
        Ok(skill_dir)
    }

    fn base_kickoff(&self, dir: &Path) -> String {
        format!(
            "Working directory: {}\n\
             `data/train.json` holds the rollout results of the current context.\n\
             Update `context/` and `{entry}`. `{entry}` is run as an executable: it reads one JSON object \
             {{\"question\": ...}} on stdin and must print one JSON object {{\"context\": ...}} on stdout.\n\
             Finish when the entrypoint works.",
            dir.display(),
            entry = self.layout.entrypoint_name()
        )
    }

    /// Base-agent session on `dir`, then artifact validation against
    /// `probes`; one remediation session on failure.
    pub async fn engineer(&self, dir: &Path, base_template: &str, probes: &[String]) -> Result<(ContextArtifact, ValidationReport), (ValidationReport, String)> {
        let bindings = base_bindings(&self.spec.agent_brief(), dir);
        let prompt = match render_prompt(AgentRole::Base, base_template, &bindings) {
            Ok(p) => p,
            Err(e) => return Err((empty_report(), e.to_string())),
        };
        let kickoff = self.base_kickoff(dir);
        let mut artifact = self.layout.artifact_at(dir);
        let protocol = self.protocol(&artifact);

        let attempt = |suffix: &'static str, kickoff: String| {
            let prompt = prompt.clone();
            async move {
                let session = self.session(AgentRole::Base, dir, prompt, kickoff, suffix).map_err(|e| e.to_string())?;
                self.run(&session).await.map_err(|e| e.to_string())
            }
        };
        if let Err(e) = attempt("", kickoff.clone()).await {
            return Err((empty_report(), e));
        }
        let report = validate_artifact(&mut artifact, &protocol, probes).await;
        if report.passed() {
            return Ok((artifact, report));
        }
        let retry = format!("{kickoff}\n\nThe artifact failed validation:\n{report}\nFix the entrypoint and context so every probe passes.");
        if let Err(e) = attempt(".retry", retry).await {
            return Err((report, e));
        }
        let report = validate_artifact(&mut artifact, &protocol, probes).await;
        if report.passed() {
            Ok((artifact, report))
        } else {
            let reason = report.failure().unwrap_or_default();
            Err((report, reason))
        }
    }
}

fn empty_report() -> ValidationReport {
    ValidationReport { entrypoint: String::new(), present: false, executable: false, probes: Vec::new() }
}
