use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Evolution, EvolutionError};
use crate::gateway::UsageLedger;
use crate::model::{ContextArtifact, DataSplit, RolloutSet, SkillDatabase, SkillRecord, SkillStatus, SplitKind};
use crate::rollout::{persist_train, rollout};
use crate::workspace::{append_evaluation, archive_skill, prepare_dir, prepare_iteration, EvaluationEntry, WorkspaceLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u32,
    pub status: SkillStatus,
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub promoted: bool,
    pub best_iteration: Option<u32>,
    pub best_val: Option<f64>,
    pub wall_clock_s: f64,
    pub detail: Option<String>,
}

/// Generator instance counts. `evaluation` counts the persisted train/val
/// rollouts of each iteration's artifact; `engineering` counts rollouts
/// produced only to feed the base agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTotals {
    pub evaluation: usize,
    pub engineering: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub iterations: Vec<IterationRow>,
    pub best_iteration: Option<u32>,
    pub best_train: Option<f64>,
    pub best_val: Option<f64>,
    pub best_artifact: Option<PathBuf>,
    pub rollouts: RolloutTotals,
    pub wall_clock_s: f64,
    pub usage: UsageLedger,
}

impl RunReport {
    pub fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?)
    }
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub db: SkillDatabase,
    pub report: RunReport,
}

impl OfflineOutcome {
    pub fn best(&self) -> Option<&SkillRecord> {
        self.db.best()
    }
}

/// State carried between iterations: the incumbent and its train rollout.
struct Incumbent {
    artifact: ContextArtifact,
    train: RolloutSet,
}

fn batches(train: &DataSplit, batch_size: Option<usize>) -> Vec<(Option<u32>, DataSplit)> {
    match batch_size {
        None => vec![(None, train.clone())],
        Some(b) => (0..train.len())
            .step_by(b)
            .enumerate()
            .map(|(j, start)| (Some(j as u32), train.slice(start..(start + b).min(train.len()))))
            .collect(),
    }
}

/// Records of `set` whose ids belong to `split`, in split order.
fn subset(set: &RolloutSet, split: &DataSplit) -> Vec<crate::model::RolloutRecord> {
    split
        .instances()
        .iter()
        .filter_map(|inst| set.detailed_results.iter().find(|r| r.id == inst.id).cloned())
        .collect()
}

enum IterationResult {
    Scored { skill: PathBuf, artifact: ContextArtifact, train: RolloutSet, val: RolloutSet },
    Failed { status: SkillStatus, skill: Option<PathBuf>, detail: String },
}

impl Evolution {
    async fn iteration(
        &self,
        k: u32,
        db: &SkillDatabase,
        incumbent: Option<&Incumbent>,
        train: &DataSplit,
        val: &DataSplit,
        totals: &mut RolloutTotals,
    ) -> Result<IterationResult, EvolutionError> {
        let layout: &WorkspaceLayout = &self.layout;
        let parts = batches(train, self.config.batch_size);
        let first_dir = prepare_iteration(layout, k, parts[0].0, incumbent.map(|i| &i.artifact), None)?;

        let skill_dir = match self.crossover(db, k, &first_dir).await {
            Ok(dir) => dir,
            Err(EvolutionError::SkillInvalid(detail)) => {
                return Ok(IterationResult::Failed { status: SkillStatus::SkillInvalid, skill: None, detail })
            }
            Err(e) => return Err(e),
        };
        let archived = archive_skill(layout, k, &skill_dir)?;
        let skill_rel = layout.relativize(&archived);

        let mut current = layout.artifact_at(&first_dir);
        for (idx, (sub, batch)) in parts.iter().enumerate() {
            let dir = if idx == 0 {
                first_dir.clone()
            } else {
                prepare_dir(layout, &WorkspaceLayout::iter_name(k, *sub), Some(&current), Some(&skill_dir))?
            };
            // The pre-session artifact in `dir` is a byte copy of `current`.
            let records = match (idx, incumbent) {
                (0, Some(inc)) => RolloutSet::new(self.spec.metric, subset(&inc.train, batch))?,
                _ => {
                    totals.engineering += batch.len();
                    rollout(&self.spec, batch, &self.generator, &self.protocol(&layout.artifact_at(&dir))).await?
                }
            };
            persist_train(&dir, &records)?;
            let probes: Vec<String> = batch.instances().iter().take(self.config.probes).map(|i| i.question.clone()).collect();
            match self.engineer(&dir, crate::assets::BASE_AGENT_PROMPT, &probes).await {
                Ok((artifact, _)) => current = artifact,
                Err((_, reason)) => {
                    let name = WorkspaceLayout::iter_name(k, *sub);
                    return Ok(IterationResult::Failed {
                        status: SkillStatus::ArtifactInvalid,
                        skill: Some(skill_rel),
                        detail: format!("{name}: {reason}"),
                    });
                }
            }
        }

        let protocol = self.protocol(&current);
        let train_set = rollout(&self.spec, train, &self.generator, &protocol).await?;
        let val_set = rollout(&self.spec, val, &self.generator, &protocol).await?;
        totals.evaluation += train.len() + val.len();
        let rollouts = layout.rollouts_dir(&WorkspaceLayout::iter_name(k, None));
        train_set.write(&rollouts.join("train.json"))?;
        val_set.write(&rollouts.join("val.json"))?;
        Ok(IterationResult::Scored { skill: skill_rel, artifact: current, train: train_set, val: val_set })
    }

    /// Runs K iterations of crossover → rollout → engineer → evaluate with
    /// elitist selection on validation score.
    pub async fn run_offline(&self, train: &DataSplit, val: &DataSplit) -> Result<OfflineOutcome, EvolutionError> {
        self.config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(crate::model::ModelError::EmptySplit.into());
        }
        debug_assert_eq!(train.kind, SplitKind::Train);
        let started = Instant::now();
        let mut db = SkillDatabase::new();
        let mut incumbent: Option<Incumbent> = None;
        let mut totals = RolloutTotals::default();
        let mut rows = Vec::new();

        for k in 1..=self.config.iterations {
            let iter_started = Instant::now();
            let result = self.iteration(k, &db, incumbent.as_ref(), train, val, &mut totals).await?;
            let wall = iter_started.elapsed().as_secs_f64();
            let (record, entry, promoted_state) = match result {
                IterationResult::Scored { skill, artifact, train: train_set, val: val_set } => {
                    let record = SkillRecord::ok(k, skill.clone(), artifact.clone(), train_set.summary.score, val_set.summary.score);
                    let entry = EvaluationEntry {
                        iteration: k,
                        sub: None,
                        train_score: Some(train_set.summary.score.value),
                        val_score: Some(val_set.summary.score.value),
                        status: SkillStatus::Ok,
                        skill_path: Some(skill),
                        artifact_path: Some(artifact.root_dir.clone()),
                        wall_clock_s: wall,
                    };
                    (record, entry, Some(Incumbent { artifact, train: train_set }))
                }
                IterationResult::Failed { status, skill, detail } => {
                    tracing::warn!(k, %status, %detail, "iteration failed");
                    let entry = EvaluationEntry {
                        iteration: k,
                        sub: None,
                        train_score: None,
                        val_score: None,
                        status,
                        skill_path: skill.clone(),
                        artifact_path: None,
                        wall_clock_s: wall,
                    };
                    (SkillRecord::failed(k, status, skill, detail), entry, None)
                }
            };
            let detail = record.detail.clone();
            let promoted = db.push(record)?;
            if promoted {
                incumbent = promoted_state;
            }
            append_evaluation(&self.layout, entry)?;
            let best = db.best();
            let row = IterationRow {
                iteration: k,
                status: db.records()[k as usize - 1].status,
                train: db.records()[k as usize - 1].train_score.map(|s| s.value),
                val: db.records()[k as usize - 1].val_score.map(|s| s.value),
                promoted,
                best_iteration: best.map(|b| b.iteration),
                best_val: best.and_then(|b| b.val_score).map(|s| s.value),
                wall_clock_s: wall,
                detail,
            };
            tracing::info!(k, status = %row.status, train = ?row.train, val = ?row.val, best = ?row.best_iteration, "iteration done");
            rows.push(row);
        }

        let best = db.best().cloned();
        let report = RunReport {
            task: self.spec.name.clone(),
            iterations: rows,
            best_iteration: best.as_ref().map(|b| b.iteration),
            best_train: best.as_ref().and_then(|b| b.train_score).map(|s| s.value),
            best_val: best.as_ref().and_then(|b| b.val_score).map(|s| s.value),
            best_artifact: best.as_ref().and_then(|b| b.artifact.as_ref()).map(|a| a.root_dir.clone()),
            rollouts: totals,
            wall_clock_s: started.elapsed().as_secs_f64(),
            usage: self.usage(),
        };
        report.write(&self.layout.run_report_path())?;
        if best.is_none() {
            return Err(EvolutionError::AllFailed(self.config.iterations));
        }
        Ok(OfflineOutcome { db, report })
    }

    /// Usage across both gateways (counted once when they share a ledger).
    pub fn usage(&self) -> UsageLedger {
        let mut usage = self.generator.usage();
        if !std::sync::Arc::ptr_eq(&self.generator.ledger(), &self.agent.ledger()) {
            usage.merge(&self.agent.usage());
        }
        usage
    }
}
