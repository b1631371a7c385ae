//! The agent tools inside a base-agent scope: writes land in the iteration
//! directory, escapes are refused.

use std::time::Duration;

use serde_json::json;

use mce::demo::toy_split;
use mce::harness::{SandboxEnv, ToolContext};
use mce::model::SplitKind;
use mce::workspace::{init_workspace, prepare_iteration, scope_for, AgentRole, WorkspaceConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let train = toy_split(SplitKind::Train, 0, 6);
    let layout = init_workspace(&tmp.path().join("ws"), &train, WorkspaceConfig::new())?;
    let iter = prepare_iteration(&layout, 1, None, None, None)?;
    let ctx = ToolContext {
        scope: scope_for(AgentRole::Base, &layout, &iter)?,
        cwd: iter.clone(),
        bash_timeout: Duration::from_secs(10),
        read_cap: 64 * 1024,
        output_cap: 16 * 1024,
        todo_path: tmp.path().join("todo.json"),
        tmp_dir: tmp.path().join("tmp"),
        env: SandboxEnv::default(),
        confine_reads: true,
    };

    let calls = [
        ("Write", json!({ "file_path": "context/rules.md", "content": "RULE-A => alpha\n" })),
        ("Edit", json!({ "file_path": "context/rules.md", "old_string": "alpha", "new_string": "ALPHA" })),
        ("Read", json!({ "file_path": "context/rules.md" })),
        ("Glob", json!({ "pattern": "**/*.md" })),
        ("Bash", json!({ "command": "wc -l context/rules.md" })),
        ("Write", json!({ "file_path": "../../escape.txt", "content": "nope" })),
        ("Bash", json!({ "command": "touch ../meta_agent/escape.txt" })),
    ];
    for (tool, args) in calls {
        let r = ctx.exec(tool, &args).await;
        println!("{tool:<5} ok={:<5} {}", r.ok, r.content.lines().next().unwrap_or(""));
    }
    println!("escape.txt exists: {}", layout.meta_dir().join("escape.txt").exists());
    Ok(())
}
