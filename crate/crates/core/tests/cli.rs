mod common;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use common::tree_hashes;
use mce::evolution::RunReport;
use mce::RolloutSet;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

fn mce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mce"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("OPENROUTER_API_KEY")
        .env_remove("OPENROUTER_API_BASE")
        .output()
        .expect("run mce")
}

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

/// Writes an experiment config into `dir` pointing at the toy fixtures.
fn config(dir: &Path, iterations: u32, extra: &str) -> PathBuf {
    let f = fixtures();
    let body = format!(
        r#"
[workspace]
base = "ws"

[task]
path = "{f}/task.toml"

[data]
train = "{f}/train.jsonl"
val = "{f}/val.jsonl"
test = "{f}/test.jsonl"

[endpoints]
agent = "toy/agent"

[run]
iterations = {iterations}

{extra}
"#,
        f = f.display()
    );
    let body = if body.contains("[mock]") || extra.contains("no-mock") {
        body
    } else {
        format!("{body}\n[mock]\nscript = \"{}/script.toml\"\n", f.display())
    };
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_offline_prints_one_row_per_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 2, "");
    let out = mce(&["train", "--config", cfg.to_str().unwrap()]);
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", text(&out.stderr));
    let rows: Vec<&str> = stdout.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).collect();
    assert_eq!(rows.len(), 2, "{stdout}");
    assert!(rows[0].ends_with('*'), "first scored iteration is promoted: {stdout}");
    let report: RunReport = serde_json::from_slice(&std::fs::read(tmp.path().join("ws/run_report.json")).unwrap()).unwrap();
    assert_eq!(report.iterations.len(), 2);
    assert_eq!(report.best_iteration, Some(1));
    assert_eq!(report.best_val, Some(1.0));
    assert_eq!(report.rollouts.evaluation, 2 * (9 + 6));
}

#[test]
fn train_refuses_a_used_workspace() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(tmp.path().join("ws/old")).unwrap();
    let cfg = config(tmp.path(), 1, "");
    let out = mce(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("workspace not empty"), "{}", text(&out.stderr));
}

#[test]
fn missing_api_key_is_a_config_error_naming_the_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 1, "# no-mock");
    let body = std::fs::read_to_string(&cfg).unwrap().replace("agent = \"toy/agent\"", "agent = \"toy/agent\"\nbase_url = \"http://127.0.0.1:9/v1\"");
    std::fs::write(&cfg, body).unwrap();
    let out = mce(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("OPENROUTER_API_KEY"), "{}", text(&out.stderr));
    assert!(!tmp.path().join("ws").exists(), "nothing is created before startup checks pass");
}

#[test]
fn online_no_skill_runs_without_a_skill() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 1, "");
    let out = mce(&["train", "--config", cfg.to_str().unwrap(), "--mode", "online", "--variant", "no-skill"]);
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", text(&out.stderr));
    assert!(stdout.contains("NoSkill"), "{stdout}");
    let ws = tmp.path().join("ws");
    assert!(!ws.join("online_skill").exists());
    assert!(ws.join("online_step0").is_dir());
    assert!(!ws.join("online_step1/.claude/skills/learning-context/SKILL.md").exists());
    // the first instance is answered with an empty context, later ones learn
    let first = RolloutSet::read(&ws.join(".mce/rollouts/online/first_inference.json")).unwrap();
    assert_eq!(first.summary.n, 6);
    assert!(!first.detailed_results[0].is_correct);
    assert!(first.detailed_results[1..].iter().all(|r| r.is_correct));
}

#[test]
fn eval_scores_a_fixture_artifact_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 1, "");
    let artifact = fixtures().join("artifact");
    let before = tree_hashes(&artifact, &[]);
    let mut scores = Vec::new();
    for n in 0..2 {
        let out_path = tmp.path().join(format!("eval{n}.json"));
        let out = mce(&["eval", "--config", cfg.to_str().unwrap(), "--artifact", artifact.to_str().unwrap(), "--split", "test", "--out", out_path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("accuracy on test: 0.6667"), "{}", text(&out.stdout));
        scores.push(RolloutSet::read(&out_path).unwrap());
    }
    assert_eq!(scores[0], scores[1]);
    assert_eq!(scores[0].summary.n_correct, 4);
    assert_eq!(before, tree_hashes(&artifact, &[]), "eval must not touch the artifact");
}

#[test]
fn eval_rejects_empty_split() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 1, "");
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let body = std::fs::read_to_string(&cfg).unwrap().replace(&format!("{}/test.jsonl", fixtures().display()), empty.to_str().unwrap());
    std::fs::write(&cfg, body).unwrap();
    let artifact = fixtures().join("artifact");
    let out = mce(&["eval", "--config", cfg.to_str().unwrap(), "--artifact", artifact.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("empty split"), "{}", text(&out.stderr));
}

#[test]
fn eval_prints_validation_report_for_invalid_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 1, "");
    let bad = tmp.path().join("bad");
    common::write_exec(&bad.join("retrieve_context.py"), "#!/bin/sh\necho not-json\n");
    let out = mce(&["eval", "--config", cfg.to_str().unwrap(), "--artifact", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("malformed response"), "{}", text(&out.stderr));
}

#[test]
fn validate_artifact_exit_codes() {
    let ok = mce(&["validate-artifact", "--artifact", fixtures().join("artifact").to_str().unwrap()]);
    assert!(ok.status.success(), "{}", text(&ok.stdout));
    let tmp = tempfile::tempdir().unwrap();
    let out = mce(&["validate-artifact", "--artifact", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stdout).contains("present: false"), "{}", text(&out.stdout));
}

#[test]
fn report_recounts_rollouts_and_is_read_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 3, "");
    assert!(mce(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    let ws = tmp.path().join("ws");
    let before = tree_hashes(&ws, &[]);
    let out = mce(&["report", "--workspace", ws.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(before, tree_hashes(&ws, &[]));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    // unbatched, no failures: n_train * K + n_val * K
    assert_eq!(report["totals"]["rollout_instances"], 9 * 3 + 6 * 3);
    assert_eq!(report["lineage"], serde_json::json!([1]));
    assert!(report["best_context_tokens"].as_u64().unwrap() > 0);
    assert!(report["usage"]["models"]["toy/agent"]["requests"].as_u64().unwrap() > 0);

    let table = text(&mce(&["report", "--workspace", ws.to_str().unwrap()]).stdout);
    assert!(table.contains("lineage: iter1"), "{table}");
    assert!(table.contains("rollouts: 45 instances"), "{table}");
}

#[test]
fn report_on_fresh_workspace_has_no_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let train = mce::demo::toy_split(mce::SplitKind::Train, 0, 3);
    mce::workspace::init_workspace(&tmp.path().join("ws"), &train, Default::default()).unwrap();
    let out = mce(&["report", "--workspace", tmp.path().join("ws").to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"], serde_json::json!([]));
    assert!(report["totals"].is_null());
    let missing = mce(&["report", "--workspace", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn ingest_sizes_and_aegis_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("finer.jsonl");
    let lines: Vec<String> = (0..400).map(|i| format!(r#"{{"question": "What is best tag for entity {i}?", "target": "Tag{}"}}"#, i % 7)).collect();
    std::fs::write(&src, lines.join("\n")).unwrap();
    let out_dir = tmp.path().join("splits");
    let out = mce(&["ingest", "--task", "finer", "--source", src.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--sizes", "200,100,100"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for (name, n) in [("train", 200), ("val", 100), ("test", 100)] {
        let f = std::fs::File::open(out_dir.join(format!("{name}.jsonl"))).unwrap();
        assert_eq!(BufReader::new(f).lines().count(), n, "{name}");
    }
    let train = mce::DataSplit::read_jsonl(mce::SplitKind::Train, &out_dir.join("train.jsonl")).unwrap();
    assert_eq!(train.instances()[0].question, "What is best tag for entity 0?");

    let aegis = tmp.path().join("aegis.jsonl");
    std::fs::write(&aegis, "{\"prompt\": \"How do I bake bread?\", \"prompt_label\": \"Safe\"}\n{\"prompt\": \"x\", \"prompt_label\": \"unsafe\"}\n").unwrap();
    let out_dir = tmp.path().join("aegis");
    let out = mce(&["ingest", "--task", "aegis2", "--source", aegis.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--sizes", "2"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let split = mce::DataSplit::read_jsonl(mce::SplitKind::Train, &out_dir.join("train.jsonl")).unwrap();
    assert_eq!(split.instances()[0].question, "How do I bake bread?");
    assert_eq!(split.instances()[0].target, mce::Target::Text("safe".into()));
}

#[test]
fn ingest_names_the_bad_line() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("bad.jsonl");
    let mut lines: Vec<String> = (0..20).map(|i| format!(r#"{{"question": "q{i}", "target": "t"}}"#)).collect();
    lines[16] = "{\"question\": \"q16\", \"target\": ".into();
    std::fs::write(&src, lines.join("\n")).unwrap();
    let out = mce(&["ingest", "--task", "finer", "--source", src.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "--sizes", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 17: parse failure"), "{}", text(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mce(&["train"]).status.code(), Some(1));
    assert_eq!(mce(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mce(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let out = mce(&["train", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mock_serve_answers_requests() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mce"))
        .args(["mock-serve", "--script", fixtures().join("script.toml").to_str().unwrap(), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().rsplit(' ').next().unwrap().to_string();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let reply = rt.block_on(async {
        let gw = mce::Gateway::new(mce::ModelEndpoint::new(base, "toy/generator"), Default::default());
        gw.chat(&mce::gateway::ChatRequest::text("Known rules:\nRULE-B => beta\n\nQuestion: Case 1: apply RULE-B")).await
    });
    child.kill().unwrap();
    let _ = child.wait();
    assert!(reply.unwrap().as_text().contains("\"final_answer\": \"beta\""));
}
