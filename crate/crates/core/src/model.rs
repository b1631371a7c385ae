//! Domain types shared across the crate.
//!
//! Everything here is a plain value object. Paths are workspace-relative;
//! only [`crate::workspace::WorkspaceLayout`] turns them into absolute paths.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid task specification: {0}")]
    TaskSpec(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("instance {0} has an empty question")]
    EmptyQuestion(u64),
    #[error("metric score {value} outside [0, 1] or n == 0 (n = {n})")]
    InvalidScore { value: f64, n: usize },
    #[error("empty split")]
    EmptySplit,
    #[error("skill database records must be contiguous: expected iteration {expected}, got {got}")]
    NonContiguous { expected: u32, got: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParserKind {
    JsonTwoField,
    JsonThreeField,
    DiagnosisTag,
    ChargeTag,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    ExactMatch,
    MicroF1,
    BinaryF1,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::ExactMatch => "exact-match",
            MetricKind::MicroF1 => "micro-f1",
            MetricKind::BinaryF1 => "binary-f1",
        };
        f.write_str(name)
    }
}

/// The task bundle handed to both agents and to the rollout engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpecification {
    pub name: String,
    /// Prose injected into agent prompts as `{task_specification}`.
    pub description: String,
    /// Generator template with exactly one `{context}` and one `{question}`.
    pub prompt_template: String,
    pub parser: ParserKind,
    pub metric: MetricKind,
    pub generator_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_note: Option<String>,
}

impl TaskSpecification {
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::TaskSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let spec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(spec)
    }

    /// Text bound to `{task_specification}` in the agent prompts.
    pub fn agent_brief(&self) -> String {
        match &self.language_note {
            Some(note) => format!("{}\n\n{}", self.description.trim_end(), note),
            None => self.description.trim_end().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks the invariants a [`TaskSpecification`] must satisfy. Parser and
/// metric are closed enums, so only the free-text fields can be wrong.
pub fn validate_task_spec(spec: &TaskSpecification) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.name.trim().is_empty() {
        out.push(Violation { field: "name", rule: "must be non-empty".into() });
    }
    if spec.description.trim().is_empty() {
        out.push(Violation { field: "description", rule: "must be non-empty".into() });
    }
    if spec.generator_model.trim().is_empty() {
        out.push(Violation { field: "generator_model", rule: "must be non-empty".into() });
    }
    let names = template::placeholders(&spec.prompt_template);
    for slot in ["context", "question"] {
        match names.iter().filter(|n| **n == slot).count() {
            0 => out.push(Violation {
                field: "prompt_template",
                rule: format!("missing placeholder {{{slot}}}"),
            }),
            1 => {}
            n => out.push(Violation {
                field: "prompt_template",
                rule: format!("placeholder multiplicity: {{{slot}}} appears {n} times"),
            }),
        }
    }
    out
}

/// Splits a label list on ASCII or full-width semicolons.
pub fn split_labels(text: &str) -> BTreeSet<String> {
    text.split([';', '；'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Ground truth as stored at ingestion: raw text or an explicit label list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Text(String),
    Labels(Vec<String>),
}

impl Target {
    pub fn as_text(&self) -> String {
        match self {
            Target::Text(t) => t.clone(),
            Target::Labels(labels) => labels.join(";"),
        }
    }

    /// Label-set view. A text target may carry the charge wrapper
    /// (`[罪名]a;b<eoa>`), which is stripped.
    pub fn label_set(&self) -> BTreeSet<String> {
        match self {
            Target::Labels(labels) => labels
                .iter()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
            Target::Text(text) => {
                let inner = text.trim();
                let inner = inner.strip_prefix("[罪名]").unwrap_or(inner);
                let inner = inner.strip_suffix("<eoa>").unwrap_or(inner);
                split_labels(inner)
            }
        }
    }
}

impl From<&str> for Target {
    fn from(s: &str) -> Self {
        Target::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataInstance {
    pub id: u64,
    pub question: String,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        })
    }
}

/// An ordered split. Order is part of the data and is never changed after
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub kind: SplitKind,
    instances: Vec<DataInstance>,
}

#[derive(Deserialize)]
struct JsonlInstance {
    id: Option<u64>,
    question: String,
    target: Target,
}

impl DataSplit {
    pub fn new(kind: SplitKind, instances: Vec<DataInstance>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id) {
                return Err(ModelError::DuplicateId(inst.id));
            }
            if inst.question.trim().is_empty() {
                return Err(ModelError::EmptyQuestion(inst.id));
            }
        }
        Ok(Self { kind, instances })
    }

    pub fn instances(&self) -> &[DataInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sub-split sharing this split's kind, e.g. one training batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> DataSplit {
        DataSplit { kind: self.kind, instances: self.instances[range].to_vec() }
    }

    /// Reads canonical JSON-lines (`question`, `target`, optional `id`).
    /// Missing ids are assigned from the line position.
    pub fn read_jsonl(kind: SplitKind, path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        let mut instances = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlInstance = serde_json::from_str(&line).map_err(|e| ModelError::Line {
                line: idx + 1,
                message: format!("parse failure: {e}"),
            })?;
            instances.push(DataInstance {
                id: row.id.unwrap_or(instances.len() as u64),
                question: row.question,
                target: row.target,
            });
        }
        Self::new(kind, instances)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A context function on disk: static files under `context/` plus an
/// executable retrieval entrypoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextArtifact {
    pub root_dir: PathBuf,
    pub context_dir: PathBuf,
    pub retrieval_entrypoint: PathBuf,
    pub validated: bool,
}

impl ContextArtifact {
    pub fn at(root_dir: impl Into<PathBuf>, entrypoint_name: &str) -> Self {
        let root_dir = root_dir.into();
        Self {
            context_dir: root_dir.join("context"),
            retrieval_entrypoint: root_dir.join(entrypoint_name),
            root_dir,
            validated: false,
        }
    }

    pub(crate) fn mark_validated(&mut self, validated: bool) {
        self.validated = validated;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub metric: MetricKind,
    pub n: usize,
}

impl MetricScore {
    pub fn new(value: f64, metric: MetricKind, n: usize) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&value) || n == 0 {
            return Err(ModelError::InvalidScore { value, n });
        }
        Ok(Self { value, metric, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillStatus {
    Ok,
    SkillInvalid,
    ArtifactInvalid,
}

impl fmt::Display for SkillStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkillStatus::Ok => "ok",
            SkillStatus::SkillInvalid => "skill-invalid",
            SkillStatus::ArtifactInvalid => "artifact-invalid",
        })
    }
}

/// One entry of the skill database. Scores are present iff `status` is ok;
/// use [`SkillRecord::ok`] / [`SkillRecord::failed`] to keep that true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub iteration: u32,
    pub skill_dir: Option<PathBuf>,
    pub artifact: Option<ContextArtifact>,
    pub train_score: Option<MetricScore>,
    pub val_score: Option<MetricScore>,
    pub status: SkillStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SkillRecord {
    pub fn ok(
        iteration: u32,
        skill_dir: PathBuf,
        artifact: ContextArtifact,
        train_score: MetricScore,
        val_score: MetricScore,
    ) -> Self {
        Self {
            iteration,
            skill_dir: Some(skill_dir),
            artifact: Some(artifact),
            train_score: Some(train_score),
            val_score: Some(val_score),
            status: SkillStatus::Ok,
            detail: None,
        }
    }

    pub fn failed(iteration: u32, status: SkillStatus, skill_dir: Option<PathBuf>, detail: impl Into<String>) -> Self {
        debug_assert!(status != SkillStatus::Ok);
        Self {
            iteration,
            skill_dir,
            artifact: None,
            train_score: None,
            val_score: None,
            status,
            detail: Some(detail.into()),
        }
    }

    pub fn is_consistent(&self) -> bool {
        let scored = self.train_score.is_some() && self.val_score.is_some();
        let unscored = self.train_score.is_none() && self.val_score.is_none();
        (self.status == SkillStatus::Ok && scored) || (self.status != SkillStatus::Ok && unscored)
    }
}

/// The ordered history of skills plus the incumbent best.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillDatabase {
    records: Vec<SkillRecord>,
    best: Option<usize>,
}

impl SkillDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[SkillRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<&SkillRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// Appends the next record and applies elitist selection: a scored record
    /// replaces the incumbent only if its validation score is strictly higher
    /// (the incumbent wins ties). Returns whether the new record became best.
    pub fn push(&mut self, record: SkillRecord) -> Result<bool, ModelError> {
        let expected = self.records.len() as u32 + 1;
        if record.iteration != expected {
            return Err(ModelError::NonContiguous { expected, got: record.iteration });
        }
        let promote = match (record.val_score, self.best()) {
            (Some(_), _) if record.status != SkillStatus::Ok => false,
            (Some(candidate), Some(incumbent)) => {
                candidate.value > incumbent.val_score.map_or(f64::NEG_INFINITY, |s| s.value)
            }
            (Some(_), None) => true,
            (None, _) => false,
        };
        self.records.push(record);
        if promote {
            self.best = Some(self.records.len() - 1);
        }
        Ok(promote)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub id: u64,
    pub question: String,
    pub llm_answer: String,
    pub target: Target,
    pub is_correct: bool,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub n: usize,
    pub n_correct: usize,
    pub score: MetricScore,
}

/// Result of one pass over a split; serialized as the `data/train.json`
/// document `{"summary": ..., "detailed_results": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub summary: RolloutSummary,
    pub detailed_results: Vec<RolloutRecord>,
}

impl RolloutSet {
    /// Builds the set and derives its summary from the records.
    pub fn new(metric: MetricKind, records: Vec<RolloutRecord>) -> Result<Self, ModelError> {
        let summary = Self::summarize(metric, &records)?;
        Ok(Self { summary, detailed_results: records })
    }

    pub fn summarize(metric: MetricKind, records: &[RolloutRecord]) -> Result<RolloutSummary, ModelError> {
        if records.is_empty() {
            return Err(ModelError::EmptySplit);
        }
        let score = crate::rollout::metric::score_records(metric, records)?;
        Ok(RolloutSummary {
            n: records.len(),
            n_correct: records.iter().filter(|r| r.is_correct).count(),
            score,
        })
    }

    /// True when the stored summary equals a fresh recomputation.
    pub fn summary_is_consistent(&self) -> bool {
        Self::summarize(self.summary.score.metric, &self.detailed_results)
            .is_ok_and(|s| s == self.summary)
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
