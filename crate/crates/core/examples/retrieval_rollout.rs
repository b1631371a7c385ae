//! Validate a context artifact and roll it out over a split. The entrypoint
//! is a script reading `{"question"}` on stdin and printing `{"context"}`.

use std::os::unix::fs::PermissionsExt;

use mce::demo::{toy_generator, toy_split, toy_task};
use mce::gateway::{MockReply, MockScript, MockServer};
use mce::harness::SandboxEnv;
use mce::model::{ContextArtifact, SplitKind};
use mce::rollout::{rollout, validate_artifact, RetrievalConfig, RetrievalProtocol};
use mce::{Gateway, GatewayConfig};

const ENTRYPOINT: &str = r#"#!/usr/bin/env python3
import json, pathlib, sys
question = json.load(sys.stdin)["question"]
rules = pathlib.Path(__file__).parent.joinpath("context", "rules.md").read_text()
keep = [line for line in rules.splitlines() if line.split(" =>")[0] in question]
print(json.dumps({"context": "\n".join(keep)}))
"#;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path().join("artifact");
    std::fs::create_dir_all(root.join("context"))?;
    std::fs::write(root.join("context/rules.md"), "RULE-A => alpha\nRULE-C => gamma\n")?;
    let entry = root.join("retrieve_context.py");
    std::fs::write(&entry, ENTRYPOINT)?;
    std::fs::set_permissions(&entry, std::fs::Permissions::from_mode(0o755))?;

    let mut artifact = ContextArtifact::at(&root, "retrieve_context.py");
    let protocol = RetrievalProtocol::for_artifact(&artifact, tmp.path(), RetrievalConfig::default(), SandboxEnv::default());
    println!("context for RULE-C: {:?}", protocol.retrieve("apply RULE-C to x").await?);
    let report = validate_artifact(&mut artifact, &protocol, &["apply RULE-A".to_string()]).await;
    print!("{report}");

    let server = MockServer::start_with(MockScript::new().with_default(MockReply::text("{}")), std::sync::Arc::new(toy_generator)).await?;
    let gw = Gateway::new(server.endpoint("toy/generator"), GatewayConfig::default());
    let split = toy_split(SplitKind::Test, 0, 9);
    let set = rollout(&toy_task(), &split, &gw, &protocol).await?;
    for r in &set.detailed_results {
        println!("{:>2} {:<5} {:<8} {}", r.id, r.is_correct, r.llm_answer, r.question);
    }
    println!("accuracy {:.4} ({} of {})", set.summary.score.value, set.summary.n_correct, set.summary.n);
    Ok(())
}
