use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{Evolution, EvolutionError, OnlineVariant};
use crate::assets::BASE_AGENT_PROMPT;
use crate::harness::strip_skill_guidance;
use crate::model::{ContextArtifact, DataSplit, MetricScore, ModelError, RolloutRecord, RolloutSet, SkillDatabase};
use crate::rollout::{persist_train, rollout};
use crate::workspace::prepare_dir;

pub const ONLINE_SKILL_DIR: &str = "online_skill";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineUpdate {
    /// Number of instances processed before this update.
    pub after: usize,
    pub dir: PathBuf,
    pub ok: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOutcome {
    pub variant: OnlineVariant,
    /// First-inference results, frozen in stream order.
    pub first_inference: Vec<RolloutRecord>,
    pub score: MetricScore,
    pub updates: Vec<OnlineUpdate>,
    pub final_artifact: ContextArtifact,
}

impl Evolution {
    /// Processes `stream` in order. Each instance is answered once with the
    /// current artifact and that answer is final; the base agent then learns
    /// from everything seen so far (targets included) before the next one.
    pub async fn run_online(&self, stream: &DataSplit) -> Result<OnlineOutcome, EvolutionError> {
        self.config.validate()?;
        if stream.is_empty() {
            return Err(ModelError::EmptySplit.into());
        }
        let variant = self.config.online_variant;
        let (skill, template) = match variant {
            OnlineVariant::FixedSkill => {
                let dir = prepare_dir(&self.layout, ONLINE_SKILL_DIR, None, None)?;
                (Some(self.crossover(&SkillDatabase::new(), 1, &dir).await?), BASE_AGENT_PROMPT.to_string())
            }
            OnlineVariant::NoSkill => (None, strip_skill_guidance(BASE_AGENT_PROMPT)),
        };

        let start_dir = prepare_dir(&self.layout, "online_step0", None, skill.as_deref())?;
        let mut current = self.layout.artifact_at(&start_dir);
        let mut seen: Vec<RolloutRecord> = Vec::new();
        let mut updates = Vec::new();
        let n = stream.len();

        for i in 0..n {
            let one = stream.slice(i..i + 1);
            let set = rollout(&self.spec, &one, &self.generator, &self.protocol(&current)).await?;
            seen.extend(set.detailed_results);
            let processed = i + 1;
            if processed == n || processed % self.config.online_stride != 0 {
                continue;
            }
            let dir = prepare_dir(&self.layout, &format!("online_step{processed}"), Some(&current), skill.as_deref())?;
            persist_train(&dir, &RolloutSet::new(self.spec.metric, seen.clone())?)?;
            let probes: Vec<String> = seen.iter().rev().take(self.config.probes).map(|r| r.question.clone()).collect();
            let update = match self.engineer(&dir, &template, &probes).await {
                Ok((artifact, _)) => {
                    current = artifact;
                    OnlineUpdate { after: processed, dir: self.layout.relativize(&dir), ok: true, detail: None }
                }
                Err((_, reason)) => {
                    tracing::warn!(after = processed, %reason, "online update failed; keeping prior artifact");
                    OnlineUpdate { after: processed, dir: self.layout.relativize(&dir), ok: false, detail: Some(reason) }
                }
            };
            updates.push(update);
        }

        let frozen = RolloutSet::new(self.spec.metric, seen)?;
        frozen.write(&self.layout.rollouts_dir("online").join("first_inference.json"))?;
        Ok(OnlineOutcome {
            variant,
            score: frozen.summary.score,
            first_inference: frozen.detailed_results,
            updates,
            final_artifact: current,
        })
    }
}
