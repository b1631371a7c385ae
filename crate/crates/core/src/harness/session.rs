use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::sandbox::SandboxEnv;
use super::tools::{tool_definitions, ToolContext};
use super::transcript::{sha256_hex, Clock, TranscriptEvent, TranscriptWriter};
use crate::gateway::{ChatMessage, Gateway};
use crate::workspace::{AgentRole, PermissionScope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionLimits {
    pub max_turns: usize,
    pub max_tool_calls: usize,
    #[serde(with = "crate::gateway::secs")]
    pub bash_timeout: Duration,
    pub read_cap: usize,
    pub output_cap: usize,
    /// Also restrict Bash reads to the scope's readable roots.
    pub confine_reads: bool,
}

impl Default for SessionLimits {
    fn default() -> Self {
        Self {
            max_turns: 80,
            max_tool_calls: 200,
            bash_timeout: Duration::from_secs(300),
            read_cap: 200 * 1024,
            output_cap: 64 * 1024,
            confine_reads: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum Termination {
    Natural,
    TurnLimit,
    ToolLimit,
    Fault(String),
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Natural => f.write_str("natural"),
            Termination::TurnLimit => f.write_str("turn-limit"),
            Termination::ToolLimit => f.write_str("tool-limit"),
            Termination::Fault(e) => write!(f, "fault: {e}"),
        }
    }
}

/// One agent conversation against a fixed scope.
#[derive(Debug, Clone)]
pub struct AgentSession {
    pub role: AgentRole,
    /// Used for transcript and scratch file names.
    pub name: String,
    pub system_prompt: String,
    pub kickoff: String,
    pub scope: PermissionScope,
    pub cwd: PathBuf,
    pub limits: SessionLimits,
    pub transcript_path: PathBuf,
    pub scratch_dir: PathBuf,
    pub env: SandboxEnv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub termination: Termination,
    pub turns: usize,
    pub tool_calls: usize,
    pub final_message: Option<String>,
}

fn parse_args(raw: &str) -> Value {
    if raw.trim().is_empty() {
        return Value::Object(Default::default());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Model → tools → model until the model stops calling tools or a limit
/// fires. Endpoint faults end the session; file effects so far remain.
pub async fn run_session(gateway: &Gateway, session: &AgentSession, clock: Arc<dyn Clock>) -> std::io::Result<SessionOutcome> {
    let mut secrets = Vec::new();
    if let Some(k) = &gateway.endpoint().api_key {
        secrets.push(k.clone());
    }
    if let Some(k) = &session.env.api_key {
        secrets.push(k.clone());
    }
    let mut log = TranscriptWriter::create(&session.transcript_path, secrets)?;
    let tools = ToolContext {
        scope: session.scope.clone(),
        cwd: session.cwd.clone(),
        bash_timeout: session.limits.bash_timeout,
        read_cap: session.limits.read_cap,
        output_cap: session.limits.output_cap,
        todo_path: session.scratch_dir.join(format!("{}.todo.json", session.name)),
        tmp_dir: session.scratch_dir.join(format!("{}.tmp", session.name)),
        env: session.env.clone(),
        confine_reads: session.limits.confine_reads,
    };
    let definitions = tool_definitions();
    log.write(&TranscriptEvent::SessionStart {
        ts: clock.now_ms(),
        role: session.role.to_string(),
        name: session.name.clone(),
        system_prompt_sha256: sha256_hex(&session.system_prompt),
        max_turns: session.limits.max_turns,
        max_tool_calls: session.limits.max_tool_calls,
    })?;
    log.write(&TranscriptEvent::UserMessage { ts: clock.now_ms(), content: session.kickoff.clone() })?;

    let mut messages = vec![ChatMessage::system(&session.system_prompt), ChatMessage::user(&session.kickoff)];
    let mut turns = 0;
    let mut calls = 0;
    let mut final_message = None;
    let termination = loop {
        if turns >= session.limits.max_turns {
            break Termination::TurnLimit;
        }
        let reply = match gateway.complete(&messages, &definitions).await {
            Ok(m) => m,
            Err(e) => break Termination::Fault(e.to_string()),
        };
        log.write(&TranscriptEvent::ModelMessage {
            ts: clock.now_ms(),
            turn: turns,
            content: reply.content.clone(),
            tool_calls: reply.tool_calls.clone(),
        })?;
        turns += 1;
        if reply.tool_calls.is_empty() {
            final_message = reply.content.clone();
            break Termination::Natural;
        }
        messages.push(reply.clone());
        let mut limited = false;
        for call in &reply.tool_calls {
            if calls >= session.limits.max_tool_calls {
                limited = true;
                break;
            }
            calls += 1;
            let args = parse_args(&call.function.arguments);
            log.write(&TranscriptEvent::ToolCall {
                ts: clock.now_ms(),
                id: call.id.clone(),
                tool: call.function.name.clone(),
                args: args.clone(),
            })?;
            let result = tools.exec(&call.function.name, &args).await;
            log.write(&TranscriptEvent::ToolResult {
                ts: clock.now_ms(),
                id: call.id.clone(),
                tool: call.function.name.clone(),
                ok: result.ok,
                code: result.code,
                result_sha256: sha256_hex(&result.content),
                result: result.content.clone(),
            })?;
            messages.push(ChatMessage::tool_result(&call.id, &result.content));
        }
        if limited {
            break Termination::ToolLimit;
        }
    };
    log.write(&TranscriptEvent::SessionEnd {
        ts: clock.now_ms(),
        termination: termination.to_string(),
        turns,
        tool_calls: calls,
    })?;
    tracing::info!(session = %session.name, %termination, turns, tool_calls = calls, "agent session finished");
    Ok(SessionOutcome { termination, turns, tool_calls: calls, final_message })
}
