//! The full offline loop on the toy task: scripted meta and base agents,
//! a mock generator, and elitist selection on validation accuracy.

use mce::demo::{toy_rig, toy_split, ScriptedAgentsConfig};
use mce::model::SplitKind;
use mce::report::workspace_report;
use mce::RunConfig;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let train = toy_split(SplitKind::Train, 0, 9);
    let val = toy_split(SplitKind::Val, 100, 10);
    // iteration 2 leaves a broken entrypoint and is recorded as a failure
    let agents = ScriptedAgentsConfig { broken_artifact: [2].into(), ..ScriptedAgentsConfig::default() };
    let run = RunConfig { iterations: 4, ..RunConfig::default() };
    let rig = toy_rig(&tmp.path().join("ws"), &train, agents, run).await?;

    let outcome = rig.evolution.run_offline(&train, &val).await?;
    for r in outcome.db.records() {
        println!(
            "iter{} {:<16} train={:?} val={:?}",
            r.iteration,
            r.status.to_string(),
            r.train_score.map(|s| s.value),
            r.val_score.map(|s| s.value)
        );
    }
    let best = outcome.best().expect("at least one scored iteration");
    println!("best: iter{} at {:?}", best.iteration, best.artifact.as_ref().map(|a| &a.root_dir));
    println!();
    print!("{}", workspace_report(&rig.evolution.layout)?);
    Ok(())
}
