//! The `{skill_database}` digest shown to the meta agent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{SkillDatabase, SkillStatus};
use crate::workspace::{SKILL_FILE, SKILL_OVERVIEW_HEADING};

pub const EMPTY_HISTORY: &str = "(no iterations yet: this is the first skill)";

const OVERVIEW_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitThresholds {
    /// train − val above this flags overfitting.
    pub overfit_gap: f64,
    /// train and val both below this flags underfitting.
    pub underfit_floor: f64,
}

impl Default for FitThresholds {
    fn default() -> Self {
        Self { overfit_gap: 0.05, underfit_floor: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSummaryEntry {
    pub iteration: u32,
    pub status: SkillStatus,
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub skill_path: Option<PathBuf>,
    pub overview: Option<String>,
    pub overfit: bool,
    pub underfit: bool,
    pub best: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillSummary {
    pub entries: Vec<SkillSummaryEntry>,
}

/// First non-empty line under the overview heading of `SKILL.md`.
pub fn overview_excerpt(skill_dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(skill_dir.join(SKILL_FILE)).ok()?;
    let mut lines = text.lines().skip_while(|l| l.trim_end() != SKILL_OVERVIEW_HEADING).skip(1);
    let line = lines.find(|l| !l.trim().is_empty())?.trim();
    if line.starts_with('#') {
        return None;
    }
    let mut excerpt: String = line.chars().take(OVERVIEW_CHARS).collect();
    if line.chars().count() > OVERVIEW_CHARS {
        excerpt.push_str("...");
    }
    Some(excerpt)
}

/// One entry per record in iteration order. Relative skill paths are
/// resolved against `base` to read the overview.
pub fn summarize_db(db: &SkillDatabase, base: &Path, thresholds: FitThresholds) -> SkillSummary {
    let best = db.best().map(|b| b.iteration);
    let entries = db
        .records()
        .iter()
        .map(|r| {
            let train = r.train_score.map(|s| s.value);
            let val = r.val_score.map(|s| s.value);
            let (overfit, underfit) = match (train, val) {
                (Some(t), Some(v)) => (t - v > thresholds.overfit_gap, t < thresholds.underfit_floor && v < thresholds.underfit_floor),
                _ => (false, false),
            };
            SkillSummaryEntry {
                iteration: r.iteration,
                status: r.status,
                train,
                val,
                skill_path: r.skill_dir.clone(),
                overview: r.skill_dir.as_ref().and_then(|d| overview_excerpt(&base.join(d))),
                overfit,
                underfit,
                best: best == Some(r.iteration),
                detail: r.detail.clone(),
            }
        })
        .collect();
    SkillSummary { entries }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

impl SkillSummary {
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return EMPTY_HISTORY.to_string();
        }
        let mut out = String::new();
        for e in &self.entries {
            let _ = write!(out, "- iter{}: status {}, train {}, val {}", e.iteration, e.status, pct(e.train), pct(e.val));
            if e.best {
                out.push_str(" [current best]");
            }
            if e.overfit {
                out.push_str(" [overfit: train exceeds val]");
            }
            if e.underfit {
                out.push_str(" [underfit: train and val both low]");
            }
            out.push('\n');
            if let Some(p) = &e.skill_path {
                let _ = writeln!(out, "  skill: {}", p.join(SKILL_FILE).display());
            }
            if let Some(o) = &e.overview {
                let _ = writeln!(out, "  overview: {o}");
            }
            if let Some(d) = &e.detail {
                let _ = writeln!(out, "  failure: {d}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContextArtifact, MetricKind, MetricScore, SkillRecord};

    fn scored(k: u32, train: f64, val: f64) -> SkillRecord {
        SkillRecord::ok(
            k,
            PathBuf::from(format!("meta_agent/skills/iter{k}")),
            ContextArtifact::at(format!("iter{k}"), "retrieve_context.py"),
            MetricScore::new(train, MetricKind::Accuracy, 10).unwrap(),
            MetricScore::new(val, MetricKind::Accuracy, 10).unwrap(),
        )
    }

    #[test]
    fn flags_overfit_and_underfit() {
        let mut db = SkillDatabase::new();
        db.push(scored(1, 0.95, 0.84)).unwrap();
        db.push(scored(2, 0.40, 0.41)).unwrap();
        let s = summarize_db(&db, Path::new("/nonexistent"), FitThresholds::default());
        assert!(s.entries[0].overfit && !s.entries[0].underfit);
        assert!(s.entries[1].underfit && !s.entries[1].overfit);
        assert!(s.entries[0].best);
        let text = s.render();
        assert!(text.contains("iter1: status ok, train 95.0%, val 84.0% [current best] [overfit"));
    }

    #[test]
    fn empty_db_renders_marker() {
        let s = summarize_db(&SkillDatabase::new(), Path::new("/"), FitThresholds::default());
        assert_eq!(s.render(), EMPTY_HISTORY);
    }

    #[test]
    fn overview_excerpt_reads_first_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(SKILL_FILE), "# S\n\n## Skill Overview\n\nCluster errors by tag.\nMore.\n").unwrap();
        assert_eq!(overview_excerpt(dir.path()).as_deref(), Some("Cluster errors by tag."));
    }
}
