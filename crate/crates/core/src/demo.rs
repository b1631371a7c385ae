//! A deterministic toy task with a scripted generator and scripted agents.
//! Examples and tests use it to drive the full loop without a live endpoint.
//!
//! Each question names one of three rules; the generator answers correctly
//! only when the retrieved context spells that rule out as `RULE-X => answer`.
//! The scripted base agent learns rules from `data/train.json`, at most `k`
//! of them in iteration `k`, so validation accuracy climbs over iterations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde_json::json;

use crate::evolution::{Evolution, RunConfig};
use crate::gateway::{Gateway, GatewayConfig, MockError, MockReply, MockRequest, MockScript, MockServer, Responder};
use crate::harness::{SandboxEnv, StepClock};
use crate::model::{DataInstance, DataSplit, MetricKind, ParserKind, RolloutSet, SplitKind, Target, TaskSpecification};
use crate::workspace::{init_workspace, parse_iter_name, WorkspaceConfig, WorkspaceError, WorkspaceLayout};

pub const RULES: [(&str, &str); 3] = [("RULE-A", "alpha"), ("RULE-B", "beta"), ("RULE-C", "gamma")];

pub const TOY_SKILL: &str = "---\nname: learning-context\ndescription: Collect rules from training rollouts.\n---\n\n\
## Skill Overview\n\nRead `data/train.json`, find each rule and its answer, and write one `RULE => answer` line per rule \
to `context/rules.md`.\n";

pub fn toy_task() -> TaskSpecification {
    TaskSpecification {
        name: "toy-rules".into(),
        description: "Each question names a rule. Answer with the word the rule maps to.".into(),
        prompt_template: "Known rules:\n{context}\n\nQuestion: {question}\n\nReply with JSON {\"reasoning\": ..., \"final_answer\": ...}.".into(),
        parser: ParserKind::JsonTwoField,
        metric: MetricKind::Accuracy,
        generator_model: "toy/generator".into(),
        language_note: None,
    }
}

pub fn toy_instance(id: u64, rule: usize) -> DataInstance {
    let (name, answer) = RULES[rule % RULES.len()];
    DataInstance { id, question: format!("Case {id}: apply {name} to token-{id}."), target: Target::Text(answer.into()) }
}

/// `n` instances with ids from `first_id`; rule `id % 3`.
pub fn toy_split(kind: SplitKind, first_id: u64, n: usize) -> DataSplit {
    let instances = (first_id..first_id + n as u64).map(|id| toy_instance(id, id as usize)).collect();
    DataSplit::new(kind, instances).expect("toy ids are unique")
}

/// Answers from the rules present in the prompt.
pub fn toy_generator(req: &MockRequest) -> Option<MockReply> {
    let text = &req.last;
    let question = text.rsplit("Question:").next()?;
    let (rule, _) = RULES.iter().find(|(name, _)| question.contains(name))?;
    let answer = Regex::new(&format!(r"(?m)^{}\s*=>\s*(\S+)", regex::escape(rule)))
        .ok()?
        .captures(text)
        .map_or("unknown".to_string(), |c| c[1].to_string());
    let body = json!({ "reasoning": format!("{rule} lookup"), "final_answer": answer });
    Some(MockReply::Text { text: body.to_string() })
}

/// Rules an agent can learn from a persisted rollout, in rule order.
pub fn learnable_rules(set: &RolloutSet) -> Vec<(String, String)> {
    let mut found = BTreeMap::new();
    for r in &set.detailed_results {
        if let Some((name, _)) = RULES.iter().find(|(name, _)| r.question.contains(name)) {
            found.insert(name.to_string(), r.target.as_text());
        }
    }
    found.into_iter().collect()
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedAgentsConfig {
    /// Iterations whose meta agent writes a SKILL.md without the overview.
    pub bad_skill: BTreeSet<u32>,
    /// Iterations whose base agent leaves a broken entrypoint.
    pub broken_artifact: BTreeSet<u32>,
    /// Cap on learned rules per iteration; `None` means iteration k learns k.
    pub rules_cap: Option<usize>,
    /// Online directories `online_step{n}` with `n` below this learn nothing.
    pub learn_after: usize,
}

/// Scripted meta and base agents plus the toy generator behind one
/// [`Responder`]. When `layout` is set, the artifact digest of every base
/// working directory is recorded before the agent's first tool call.
#[derive(Clone)]
pub struct ScriptedAgents {
    pub config: ScriptedAgentsConfig,
    pub layout: Option<WorkspaceLayout>,
    pub pre_session_digests: Arc<Mutex<BTreeMap<String, String>>>,
    pub sessions: Arc<Mutex<Vec<(String, String)>>>,
}

impl ScriptedAgents {
    pub fn new(config: ScriptedAgentsConfig) -> Self {
        Self { config, layout: None, pre_session_digests: Default::default(), sessions: Default::default() }
    }

    pub fn with_layout(mut self, layout: WorkspaceLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn responder(self) -> Responder {
        Arc::new(move |req| self.respond(req))
    }

    pub fn respond(&self, req: &MockRequest) -> Option<MockReply> {
        if req.system.starts_with("# Meta-Level Agent") {
            self.meta(req)
        } else if req.system.starts_with("# Context Engineer") {
            self.base(req)
        } else {
            toy_generator(req)
        }
    }

    fn log(&self, role: &str, what: &str) {
        self.sessions.lock().expect("log lock").push((role.into(), what.into()));
    }

    fn meta(&self, req: &MockRequest) -> Option<MockReply> {
        let target = Regex::new(r"Write the evolved skill to `([^`]+)`").ok()?.captures(&req.conversation)?[1].to_string();
        if req.turn > 0 {
            return Some(MockReply::text("Skill written."));
        }
        self.log("meta", &target);
        let k = target.split('/').next().and_then(parse_iter_name).map(|(k, _)| k).unwrap_or(0);
        let content = if self.config.bad_skill.contains(&k) { "# no overview here\n".to_string() } else { TOY_SKILL.to_string() };
        Some(MockReply::tool("Write", json!({ "file_path": target, "content": content })))
    }

    fn base(&self, req: &MockRequest) -> Option<MockReply> {
        let dir = PathBuf::from(Regex::new(r"Working directory: (\S+)").ok()?.captures(&req.conversation)?[1].to_string());
        let name = dir.file_name()?.to_string_lossy().into_owned();
        match req.turn {
            0 => {
                self.log("base", &name);
                if let Some(layout) = &self.layout {
                    if let Ok(d) = layout.artifact_digest(&layout.artifact_at(&dir)) {
                        self.pre_session_digests.lock().expect("digest lock").entry(name).or_insert(d);
                    }
                }
                Some(MockReply::tool("Read", json!({ "file_path": "data/train.json" })))
            }
            1 => Some(self.write_context(&dir, &name)),
            2 if self.broken(&name) => Some(MockReply::tool(
                "Write",
                json!({ "file_path": "retrieve_context.py", "content": "#!/usr/bin/env python3\nimport sys\nsys.exit(3)\n" }),
            )),
            _ => Some(MockReply::text("Context updated.")),
        }
    }

    fn broken(&self, name: &str) -> bool {
        parse_iter_name(name).is_some_and(|(k, _)| self.config.broken_artifact.contains(&k))
    }

    fn write_context(&self, dir: &Path, name: &str) -> MockReply {
        let rules = RolloutSet::read(&dir.join("data/train.json")).map(|s| learnable_rules(&s)).unwrap_or_default();
        let step = name.strip_prefix("online_step").and_then(|n| n.parse::<usize>().ok());
        let cap = match (self.config.rules_cap, parse_iter_name(name), step) {
            (_, _, Some(n)) if n < self.config.learn_after => 0,
            (Some(c), _, _) => c,
            (None, Some((k, _)), _) => k as usize,
            (None, None, _) => usize::MAX,
        };
        let lines: Vec<String> = rules.iter().take(cap).map(|(r, a)| format!("{r} => {a}")).collect();
        MockReply::tool("Write", json!({ "file_path": "context/rules.md", "content": lines.join("\n") + "\n" }))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RigError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Mock(#[from] MockError),
}

/// A fresh workspace at `base` wired to a loopback mock serving the scripted
/// agents and the toy generator.
pub struct ToyRig {
    pub evolution: Evolution,
    pub agents: ScriptedAgents,
    pub server: MockServer,
}

pub async fn toy_rig(base: &Path, train: &DataSplit, agents: ScriptedAgentsConfig, run: RunConfig) -> Result<ToyRig, RigError> {
    let layout = init_workspace(base, train, WorkspaceConfig::new())?;
    let agents = ScriptedAgents::new(agents).with_layout(layout.clone());
    let script = MockScript::new().with_default(MockReply::text("unscripted request"));
    let server = MockServer::start_with(script, agents.clone().responder()).await?;
    let generator = Gateway::new(server.endpoint("toy/generator"), GatewayConfig::default());
    let agent = Gateway::new(server.endpoint("toy/agent"), GatewayConfig::default()).with_ledger(generator.ledger());
    let mut evolution = Evolution::new(layout, toy_task(), generator, agent, run);
    evolution.env = SandboxEnv {
        api_base: Some(server.base_url()),
        api_key: Some("mock-key".into()),
        sandbox_model: Some("toy/generator".into()),
        embedding_model: Some("toy/embedding".into()),
    };
    evolution.clock = Arc::new(StepClock::default());
    Ok(ToyRig { evolution, agents, server })
}
