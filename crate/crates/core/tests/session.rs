use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use mce::gateway::{Matcher, MockReply, MockScript, MockServer};
use mce::harness::{read_transcript, replay_script, run_session, calls_have_results, AgentSession, SandboxEnv, SessionLimits, StepClock, Termination, TranscriptEvent};
use mce::workspace::AgentRole;
use mce::{Gateway, GatewayConfig, PermissionScope};

fn session(dir: &Path, limits: SessionLimits) -> AgentSession {
    let work = dir.join("work");
    std::fs::create_dir_all(&work).unwrap();
    AgentSession {
        role: AgentRole::Base,
        name: "probe".into(),
        system_prompt: "# Test Agent".into(),
        kickoff: "Build the context.".into(),
        scope: PermissionScope::new(vec![work.clone()], vec![work.clone()], true).unwrap(),
        cwd: work,
        limits,
        transcript_path: dir.join("logs/probe.jsonl"),
        scratch_dir: dir.join("scratch"),
        env: SandboxEnv::default(),
    }
}

fn three_step_script() -> MockScript {
    MockScript::new()
        .entry(Matcher::any().at_turn(0), MockReply::tool("Write", json!({ "file_path": "context/notes.md", "content": "RULE-A => alpha\n" })))
        .entry(
            Matcher::any().at_turn(1),
            MockReply::tools(vec![("Read", json!({ "file_path": "context/notes.md" })), ("Bash", json!({ "command": "ls context" }))]),
        )
        .entry(Matcher::any().at_turn(2), MockReply::text("Done."))
}

#[tokio::test]
async fn scripted_session_runs_to_natural_end() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(three_step_script()).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig::default());
    let s = session(dir.path(), SessionLimits::default());
    let out = run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert_eq!(out.termination, Termination::Natural);
    assert_eq!((out.turns, out.tool_calls), (3, 3));
    assert_eq!(out.final_message.as_deref(), Some("Done."));
    assert_eq!(std::fs::read_to_string(s.cwd.join("context/notes.md")).unwrap(), "RULE-A => alpha\n");

    let events = read_transcript(&s.transcript_path).unwrap();
    assert!(calls_have_results(&events));
    let bash = events.iter().find_map(|e| match e {
        TranscriptEvent::ToolResult { tool, result, .. } if tool == "Bash" => Some(result.clone()),
        _ => None,
    });
    assert!(bash.unwrap().contains("notes.md"));
}

#[tokio::test]
async fn replaying_a_transcript_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(three_step_script()).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig::default());
    let s = session(dir.path(), SessionLimits::default());
    run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    let first = read_transcript(&s.transcript_path).unwrap();

    std::fs::remove_dir_all(&s.cwd).unwrap();
    std::fs::remove_dir_all(&s.scratch_dir).ok();
    std::fs::create_dir_all(&s.cwd).unwrap();
    let replay = MockServer::start(replay_script(&first, Some("# Test Agent"))).await.unwrap();
    let gw = Gateway::new(replay.endpoint("agent"), GatewayConfig::default());
    run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert_eq!(read_transcript(&s.transcript_path).unwrap(), first);
}

#[tokio::test]
async fn turn_limit_stops_a_looping_agent() {
    let dir = tempfile::tempdir().unwrap();
    let script = MockScript::new().with_default(MockReply::tool("Glob", json!({ "pattern": "*" })));
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig::default());
    let s = session(dir.path(), SessionLimits { max_turns: 4, ..SessionLimits::default() });
    let out = run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert_eq!(out.termination, Termination::TurnLimit);
    assert_eq!((out.turns, out.tool_calls), (4, 4));
    assert_eq!(server.stats().chat_requests, 4);
}

#[tokio::test]
async fn tool_limit_cuts_mid_turn() {
    let dir = tempfile::tempdir().unwrap();
    let call = ("Glob", json!({ "pattern": "*" }));
    let script = MockScript::new().with_default(MockReply::tools(vec![call.clone(), call.clone(), call]));
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig::default());
    let s = session(dir.path(), SessionLimits { max_tool_calls: 5, ..SessionLimits::default() });
    let out = run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert_eq!(out.termination, Termination::ToolLimit);
    assert_eq!((out.turns, out.tool_calls), (2, 5));
    assert!(calls_have_results(&read_transcript(&s.transcript_path).unwrap()));
}

#[tokio::test]
async fn endpoint_failure_is_a_fault_that_keeps_file_effects() {
    let dir = tempfile::tempdir().unwrap();
    let script = MockScript::new()
        .entry(Matcher::any().at_turn(0), MockReply::tool("Write", json!({ "file_path": "kept.txt", "content": "x" })))
        .with_default(MockReply::Status { code: 500, message: "down".into() });
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig { retry_backoff: std::time::Duration::ZERO, ..GatewayConfig::default() });
    let s = session(dir.path(), SessionLimits::default());
    let out = run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert!(matches!(out.termination, Termination::Fault(_)), "{}", out.termination);
    assert!(s.cwd.join("kept.txt").is_file());
}

#[tokio::test]
async fn out_of_scope_calls_fail_without_ending_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let outside = dir.path().join("outside.txt");
    let script = MockScript::new()
        .entry(Matcher::any().at_turn(0), MockReply::tool("Write", json!({ "file_path": "../outside.txt", "content": "x" })))
        .entry(Matcher::any().at_turn(1), MockReply::text("gave up"));
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("agent"), GatewayConfig::default());
    let s = session(dir.path(), SessionLimits::default());
    let out = run_session(&gw, &s, Arc::new(StepClock::default())).await.unwrap();
    assert_eq!(out.termination, Termination::Natural);
    assert!(!outside.exists());
    let denied = read_transcript(&s.transcript_path).unwrap().into_iter().any(|e| matches!(e, TranscriptEvent::ToolResult { ok: false, .. }));
    assert!(denied);
}
