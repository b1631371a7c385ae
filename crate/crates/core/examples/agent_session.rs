//! Run one bounded agent session against a scripted model, then replay its
//! transcript and get the same conversation back.

use std::sync::Arc;

use serde_json::json;

use mce::gateway::{Matcher, MockReply, MockScript, MockServer};
use mce::harness::{read_transcript, replay_script, run_session, AgentSession, SandboxEnv, SessionLimits, StepClock};
use mce::workspace::AgentRole;
use mce::{Gateway, GatewayConfig, PermissionScope};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let work = tmp.path().join("work");
    std::fs::create_dir_all(&work)?;
    let session = AgentSession {
        role: AgentRole::Base,
        name: "demo".into(),
        system_prompt: "# Demo Agent".into(),
        kickoff: "Write the context file.".into(),
        scope: PermissionScope::new(vec![work.clone()], vec![work.clone()], true)?,
        cwd: work.clone(),
        limits: SessionLimits { max_turns: 10, ..SessionLimits::default() },
        transcript_path: tmp.path().join("demo.jsonl"),
        scratch_dir: tmp.path().join("scratch"),
        env: SandboxEnv::default(),
    };

    let script = MockScript::new()
        .entry(Matcher::any().at_turn(0), MockReply::tool("Write", json!({ "file_path": "context/notes.md", "content": "hello\n" })))
        .entry(Matcher::any().at_turn(1), MockReply::tool("Bash", json!({ "command": "cat context/notes.md" })))
        .with_default(MockReply::text("All done."));
    let server = MockServer::start(script).await?;
    let gw = Gateway::new(server.endpoint("demo/agent"), GatewayConfig::default());
    let outcome = run_session(&gw, &session, Arc::new(StepClock::default())).await?;
    println!("{outcome:?}");

    let events = read_transcript(&session.transcript_path)?;
    for e in &events {
        println!("{}", serde_json::to_string(e)?);
    }

    std::fs::remove_dir_all(&work)?;
    std::fs::create_dir_all(&work)?;
    let replay = MockServer::start(replay_script(&events, None)).await?;
    let gw = Gateway::new(replay.endpoint("demo/agent"), GatewayConfig::default());
    run_session(&gw, &session, Arc::new(StepClock::default())).await?;
    println!("replay identical: {}", read_transcript(&session.transcript_path)? == events);
    Ok(())
}
