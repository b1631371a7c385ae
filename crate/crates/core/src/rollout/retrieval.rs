//! The retrieval wire protocol: one process per question, `{"question"}` on
//! stdin, `{"context"}` on stdout.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::process::Command;

use crate::fsutil::is_executable;
use crate::harness::sandbox::{run_bounded, Confinement, SandboxEnv};
use crate::model::ContextArtifact;

pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 400_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("entrypoint absent")]
    Absent,
    #[error("entrypoint not executable")]
    NotExecutable,
    #[error("spawn failed: {0}")]
    Spawn(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("exited with status {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    #[serde(with = "crate::gateway::secs")]
    pub timeout: Duration,
    pub max_context_chars: usize,
    /// Confine entrypoints with Landlock (no writes outside `/dev/null`).
    pub confine: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(60), max_context_chars: DEFAULT_MAX_CONTEXT_CHARS, confine: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalProtocol {
    pub entrypoint: PathBuf,
    /// Working directory for the entrypoint process.
    pub root: PathBuf,
    pub config: RetrievalConfig,
    pub env: SandboxEnv,
}

#[derive(Deserialize)]
struct Response {
    context: String,
}

/// Truncates to `max` chars, appending a marker when anything was cut.
pub fn truncate_context(context: String, max: usize) -> String {
    match context.char_indices().nth(max) {
        None => context,
        Some((cut, _)) => {
            let total = context.chars().count();
            format!("{}\n[context truncated: {max} of {total} chars kept]", &context[..cut])
        }
    }
}

impl RetrievalProtocol {
    /// Protocol for `artifact`; relative artifact paths are taken from `base`.
    pub fn for_artifact(artifact: &ContextArtifact, base: &Path, config: RetrievalConfig, env: SandboxEnv) -> Self {
        Self {
            entrypoint: base.join(&artifact.retrieval_entrypoint),
            root: base.join(&artifact.root_dir),
            config,
            env,
        }
    }

    pub async fn retrieve(&self, question: &str) -> Result<String, RetrievalError> {
        if !self.entrypoint.exists() {
            return Err(RetrievalError::Absent);
        }
        if !is_executable(&self.entrypoint) {
            return Err(RetrievalError::NotExecutable);
        }
        let mut cmd = Command::new(&self.entrypoint);
        cmd.current_dir(&self.root).env_clear().envs(self.env.vars(&self.root, None));
        if self.config.confine {
            Confinement::writes_only(Vec::new())
                .apply(&mut cmd)
                .map_err(|e| RetrievalError::Spawn(e.to_string()))?;
        }
        let request = serde_json::json!({ "question": question }).to_string();
        // Multi-byte text can take up to four bytes per char.
        let cap = self.config.max_context_chars.saturating_mul(8).saturating_add(1 << 20);
        let out = run_bounded(cmd, Some(request.as_bytes()), self.config.timeout, cap)
            .await
            .map_err(|e| RetrievalError::Spawn(e.to_string()))?;
        if out.timed_out {
            return Err(RetrievalError::Timeout(self.config.timeout));
        }
        if out.code != Some(0) {
            let stderr = String::from_utf8_lossy(&out.stderr);
            let tail: String = stderr.chars().rev().take(2000).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(RetrievalError::NonZeroExit { code: out.code, stderr: tail });
        }
        if out.stdout_truncated {
            return Err(RetrievalError::Malformed("response exceeds size bound".into()));
        }
        let text = String::from_utf8(out.stdout).map_err(|_| RetrievalError::Malformed("stdout is not UTF-8".into()))?;
        let resp: Response =
            serde_json::from_str(text.trim()).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        Ok(truncate_context(resp.context, self.config.max_context_chars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_marks_cut() {
        assert_eq!(truncate_context("abc".into(), 3), "abc");
        let t = truncate_context("héllo".into(), 2);
        assert!(t.starts_with("hé\n[context truncated: 2 of 5"));
    }
}
