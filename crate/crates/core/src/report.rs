//! Read-only summaries of a workspace.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::RunReport;
use crate::gateway::UsageLedger;
use crate::model::{ModelError, RolloutSet, SkillStatus};
use crate::workspace::{parse_iter_name, read_evaluations, WorkspaceError, WorkspaceLayout};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} not found")]
    Missing(PathBuf),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: u32,
    pub status: SkillStatus,
    pub train: Option<f64>,
    pub val: Option<f64>,
    /// Best iteration after this one was scored.
    pub best_so_far: Option<u32>,
    pub context_tokens: Option<usize>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    /// Instances in persisted evaluation rollouts (train + val, all iterations).
    pub rollout_instances: usize,
    pub train_instances: usize,
    pub val_instances: usize,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub rows: Vec<ReportRow>,
    /// Iterations that became best, in order.
    pub lineage: Vec<u32>,
    pub best_iteration: Option<u32>,
    pub best_context_tokens: Option<usize>,
    pub totals: Option<ReportTotals>,
    pub usage: Option<UsageLedger>,
}

/// chars/4 over every file in the artifact's `context/` plus its entrypoint.
pub fn context_token_estimate(artifact_dir: &Path, entrypoint_name: &str) -> std::io::Result<usize> {
    let mut chars = 0usize;
    for entry in walkdir::WalkDir::new(artifact_dir.join("context")).into_iter().filter_map(Result::ok) {
        if entry.file_type().is_file() {
            chars += String::from_utf8_lossy(&std::fs::read(entry.path())?).chars().count();
        }
    }
    if let Ok(bytes) = std::fs::read(artifact_dir.join(entrypoint_name)) {
        chars += String::from_utf8_lossy(&bytes).chars().count();
    }
    Ok(chars.div_ceil(4))
}

fn count_rollouts(layout: &WorkspaceLayout) -> Result<(usize, usize), ReportError> {
    let dir = layout.internal_dir().join("rollouts");
    let (mut train, mut val) = (0, 0);
    let Ok(entries) = std::fs::read_dir(&dir) else { return Ok((0, 0)) };
    for entry in entries {
        let entry = entry?;
        if parse_iter_name(&entry.file_name().to_string_lossy()).is_none() {
            continue;
        }
        for (name, slot) in [("train.json", &mut train), ("val.json", &mut val)] {
            let path = entry.path().join(name);
            if path.is_file() {
                *slot += RolloutSet::read(&path)?.summary.n;
            }
        }
    }
    Ok((train, val))
}

/// Builds the report from `meta_agent/evaluations.json`, the persisted
/// rollouts and `run_report.json` (when present). Never writes.
pub fn workspace_report(layout: &WorkspaceLayout) -> Result<WorkspaceReport, ReportError> {
    let path = layout.evaluations_path();
    if !path.is_file() {
        return Err(ReportError::Missing(path));
    }
    let entries = read_evaluations(layout)?;
    let mut rows = Vec::new();
    let mut lineage = Vec::new();
    let mut best: Option<(u32, f64)> = None;
    for e in entries.iter().filter(|e| e.sub.is_none()) {
        if let (SkillStatus::Ok, Some(v)) = (e.status, e.val_score) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((e.iteration, v));
                lineage.push(e.iteration);
            }
        }
        let context_tokens = e.artifact_path.as_ref().and_then(|p| context_token_estimate(&layout.resolve(p), layout.entrypoint_name()).ok());
        rows.push(ReportRow {
            iteration: e.iteration,
            status: e.status,
            train: e.train_score,
            val: e.val_score,
            best_so_far: best.map(|(k, _)| k),
            context_tokens,
            wall_clock_s: e.wall_clock_s,
        });
    }
    let best_iteration = best.map(|(k, _)| k);
    let best_context_tokens = best_iteration.and_then(|k| rows.iter().find(|r| r.iteration == k)).and_then(|r| r.context_tokens);
    let totals = if rows.is_empty() {
        None
    } else {
        let (train, val) = count_rollouts(layout)?;
        let wall: f64 = rows.iter().map(|r| r.wall_clock_s).sum();
        Some(ReportTotals {
            rollout_instances: train + val,
            train_instances: train,
            val_instances: val,
            wall_clock_s: wall,
        })
    };
    let report_path = layout.run_report_path();
    let usage = match std::fs::read(&report_path) {
        Ok(bytes) => serde_json::from_slice::<RunReport>(&bytes).ok().map(|r| r.usage),
        Err(_) => None,
    };
    Ok(WorkspaceReport { rows, lineage, best_iteration, best_context_tokens, totals, usage })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl fmt::Display for WorkspaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>4}  {:>8}  {:>8}  {:<16}  {:>4}  {:>8}", "k", "train", "val", "status", "best", "tokens")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4}  {:>8}  {:>8}  {:<16}  {:>4}  {:>8}",
                r.iteration,
                opt(r.train),
                opt(r.val),
                r.status.to_string(),
                r.best_so_far.map_or("-".into(), |k| k.to_string()),
                r.context_tokens.map_or("-".into(), |t| t.to_string()),
            )?;
        }
        if !self.lineage.is_empty() {
            let chain: Vec<String> = self.lineage.iter().map(|k| format!("iter{k}")).collect();
            writeln!(f, "lineage: {}", chain.join(" -> "))?;
        }
        if let Some(t) = &self.totals {
            writeln!(
                f,
                "rollouts: {} instances ({} train, {} val); wall clock {:.1}s",
                t.rollout_instances,
                t.train_instances,
                t.val_instances,
                t.wall_clock_s
            )?;
        }
        if let Some(usage) = &self.usage {
            for (model, u) in &usage.models {
                writeln!(f, "usage {model}: {} requests, {} prompt + {} completion tokens", u.requests, u.prompt_tokens, u.completion_tokens)?;
            }
        }
        Ok(())
    }
}
