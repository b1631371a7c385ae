//! Online mode: each test instance is answered first, then the base agent
//! updates the context from what it just saw.

use mce::demo::{toy_instance, toy_rig, ScriptedAgentsConfig};
use mce::evolution::{Mode, OnlineVariant};
use mce::model::{DataSplit, SplitKind};
use mce::RunConfig;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let stream = DataSplit::new(SplitKind::Test, [0, 1, 0, 2, 1, 2, 0].iter().enumerate().map(|(i, r)| toy_instance(i as u64, *r)).collect())?;
    let run = RunConfig { mode: Mode::Online, online_variant: OnlineVariant::FixedSkill, ..RunConfig::default() };
    let rig = toy_rig(&tmp.path().join("ws"), &stream, ScriptedAgentsConfig::default(), run).await?;

    let outcome = rig.evolution.run_online(&stream).await?;
    for r in &outcome.first_inference {
        println!("{} correct={:<5} answer={}", r.question, r.is_correct, r.llm_answer);
    }
    println!("{} updates, online score {:.4}", outcome.updates.len(), outcome.score.value);
    println!("final artifact: {}", outcome.final_artifact.root_dir.display());
    Ok(())
}
