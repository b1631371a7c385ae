//! JSON-lines session transcripts with secret redaction.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::tools::ToolErrorCode;
use crate::gateway::{Matcher, MockReply, MockScript, MockToolCall, ToolCall};

static SECRET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"sk-[A-Za-z0-9_\-]{8,}").expect("secret regex"));

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch (or any fixed origin).
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Ticks by one on every read; makes transcripts byte-reproducible.
#[derive(Debug, Default)]
pub struct StepClock(AtomicU64);

impl Clock for StepClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    SessionStart {
        ts: u64,
        role: String,
        name: String,
        system_prompt_sha256: String,
        max_turns: usize,
        max_tool_calls: usize,
    },
    UserMessage {
        ts: u64,
        content: String,
    },
    ModelMessage {
        ts: u64,
        turn: usize,
        content: Option<String>,
        tool_calls: Vec<ToolCall>,
    },
    ToolCall {
        ts: u64,
        id: String,
        tool: String,
        args: Value,
    },
    ToolResult {
        ts: u64,
        id: String,
        tool: String,
        ok: bool,
        code: Option<ToolErrorCode>,
        result_sha256: String,
        result: String,
    },
    SessionEnd {
        ts: u64,
        termination: String,
        turns: usize,
        tool_calls: usize,
    },
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub struct TranscriptWriter {
    file: File,
    secrets: Vec<String>,
}

impl TranscriptWriter {
    /// Truncates any previous transcript at `path`.
    pub fn create(path: &Path, secrets: Vec<String>) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { file, secrets: secrets.into_iter().filter(|s| s.len() >= 4).collect() })
    }

    pub fn redact(&self, text: &str) -> String {
        let mut out = SECRET.replace_all(text, "[REDACTED]").into_owned();
        for secret in &self.secrets {
            out = out.replace(secret.as_str(), "[REDACTED]");
        }
        out
    }

    pub fn write(&mut self, event: &TranscriptEvent) -> io::Result<()> {
        let line = serde_json::to_string(event).map_err(io::Error::other)?;
        writeln!(self.file, "{}", self.redact(&line))?;
        self.file.flush()
    }
}

pub fn read_transcript(path: &Path) -> io::Result<Vec<TranscriptEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(events)
}

/// Every recorded tool call has exactly one result with the same id.
pub fn calls_have_results(events: &[TranscriptEvent]) -> bool {
    let mut open = std::collections::BTreeMap::<&str, usize>::new();
    for e in events {
        match e {
            TranscriptEvent::ToolCall { id, .. } => *open.entry(id).or_default() += 1,
            TranscriptEvent::ToolResult { id, .. } => match open.get_mut(id.as_str()) {
                Some(n) if *n > 0 => *n -= 1,
                _ => return false,
            },
            _ => {}
        }
    }
    open.values().all(|n| *n == 0)
}

/// A mock script that replays the model side of a transcript turn by turn.
/// `system` narrows matching to sessions whose system prompt contains it.
pub fn replay_script(events: &[TranscriptEvent], system: Option<&str>) -> MockScript {
    let mut script = MockScript::new();
    for e in events {
        if let TranscriptEvent::ModelMessage { turn, content, tool_calls, .. } = e {
            let matcher = Matcher { system: system.map(str::to_string), turn: Some(*turn), ..Matcher::default() };
            let reply = if tool_calls.is_empty() {
                MockReply::Text { text: content.clone().unwrap_or_default() }
            } else {
                MockReply::ToolCalls {
                    text: content.clone(),
                    calls: tool_calls
                        .iter()
                        .map(|c| MockToolCall {
                            name: c.function.name.clone(),
                            arguments: Value::String(c.function.arguments.clone()),
                        })
                        .collect(),
                }
            };
            script.entries.push(crate::gateway::ScriptEntry { matcher, reply, times: Some(1) });
        }
    }
    script
}
