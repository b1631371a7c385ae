use std::fmt;

use serde::{Deserialize, Serialize};

use super::retrieval::{RetrievalError, RetrievalProtocol};
use crate::fsutil::is_executable;
use crate::model::ContextArtifact;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub question: String,
    pub ok: bool,
    pub context_chars: usize,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entrypoint: String,
    pub present: bool,
    pub executable: bool,
    pub probes: Vec<ProbeOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.present && self.executable && !self.probes.is_empty() && self.probes.iter().all(|p| p.ok)
    }

    /// First failure reason, if any.
    pub fn failure(&self) -> Option<String> {
        if !self.present {
            return Some("entrypoint absent".into());
        }
        if !self.executable {
            return Some("entrypoint not executable".into());
        }
        if self.probes.is_empty() {
            return Some("no probes".into());
        }
        self.probes.iter().find(|p| !p.ok).map(|p| p.detail.clone().unwrap_or_default())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Artifact validation: {}", if self.passed() { "PASS" } else { "FAIL" })?;
        writeln!(f, "- entrypoint: {}", self.entrypoint)?;
        writeln!(f, "- present: {}", self.present)?;
        writeln!(f, "- executable: {}", self.executable)?;
        for (i, p) in self.probes.iter().enumerate() {
            let q: String = p.question.chars().take(80).collect();
            match &p.detail {
                None => writeln!(f, "- probe {}: ok ({} chars) for {q:?}", i + 1, p.context_chars)?,
                Some(d) => writeln!(f, "- probe {}: FAIL {d} for {q:?}", i + 1)?,
            }
        }
        Ok(())
    }
}

/// Checks the entrypoint exists, is executable and answers every probe.
/// Marks the artifact validated only on a full pass.
pub async fn validate_artifact(artifact: &mut ContextArtifact, protocol: &RetrievalProtocol, probes: &[String]) -> ValidationReport {
    let entry = &protocol.entrypoint;
    let mut report = ValidationReport {
        entrypoint: entry.display().to_string(),
        present: entry.is_file(),
        executable: is_executable(entry),
        probes: Vec::new(),
    };
    if report.present && report.executable {
        for question in probes {
            let outcome = match protocol.retrieve(question).await {
                Ok(ctx) => ProbeOutcome { question: question.clone(), ok: true, context_chars: ctx.chars().count(), detail: None },
                Err(e) => {
                    let detail = match &e {
                        RetrievalError::Malformed(_) | RetrievalError::Absent | RetrievalError::NotExecutable => e.to_string(),
                        other => format!("retrieval error: {other}"),
                    };
                    ProbeOutcome { question: question.clone(), ok: false, context_chars: 0, detail: Some(detail) }
                }
            };
            report.probes.push(outcome);
        }
    }
    artifact.mark_validated(report.passed());
    report
}
