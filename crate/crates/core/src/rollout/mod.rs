//! Rollout(c; D): retrieve context per question, query the generator,
//! parse and score.

pub mod metric;
pub mod parse;
pub mod retrieval;
pub mod validate;

use std::path::Path;

use futures::stream::{self, StreamExt};

pub use metric::{score, score_records};
pub use parse::{parse_answer, AnswerValue, ParsedAnswer};
pub use retrieval::{RetrievalConfig, RetrievalError, RetrievalProtocol};
pub use validate::{validate_artifact, ProbeOutcome, ValidationReport};

use crate::gateway::{ChatRequest, Gateway};
use crate::model::{DataInstance, DataSplit, ModelError, RolloutRecord, RolloutSet, TaskSpecification};
use crate::template::fill_generator_prompt;

pub const MODEL_FAILURE: &str = "model failure";

async fn run_instance(inst: &DataInstance, spec: &TaskSpecification, gateway: &Gateway, protocol: &RetrievalProtocol) -> RolloutRecord {
    let (context, retrieval_error) = match protocol.retrieve(&inst.question).await {
        Ok(ctx) => (ctx, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    let prompt = fill_generator_prompt(&spec.prompt_template, &context, &inst.question);
    let (raw_response, parsed) = match gateway.chat(&ChatRequest::text(prompt)).await {
        Ok(out) => {
            let raw = out.as_text();
            let parsed = parse_answer(spec.parser, &raw);
            (raw, Some(parsed))
        }
        Err(e) => {
            tracing::warn!(id = inst.id, error = %e, "generator call failed");
            (String::new(), None)
        }
    };
    let (llm_answer, parse_error) = match &parsed {
        Some(p) if p.ok => (p.value.to_text(), None),
        Some(p) => (String::new(), p.detail.clone()),
        None => (String::new(), Some(MODEL_FAILURE.to_string())),
    };
    let prediction = parse_error.is_none().then_some(llm_answer.as_str());
    let is_correct = metric::instance_correct(spec.metric, prediction, &inst.target);
    RolloutRecord {
        id: inst.id,
        question: inst.question.clone(),
        llm_answer,
        target: inst.target.clone(),
        is_correct,
        raw_response,
        parse_error,
        retrieval_error,
    }
}

/// Runs every instance of `split` (concurrently, bounded by the gateway cap)
/// and returns records in split order. Instance faults never abort the run.
pub async fn rollout(
    spec: &TaskSpecification,
    split: &DataSplit,
    gateway: &Gateway,
    protocol: &RetrievalProtocol,
) -> Result<RolloutSet, ModelError> {
    let concurrency = gateway.config().max_concurrency.max(1);
    let records: Vec<RolloutRecord> = stream::iter(split.instances())
        .map(|inst| run_instance(inst, spec, gateway, protocol))
        .buffered(concurrency)
        .collect()
        .await;
    RolloutSet::new(spec.metric, records)
}

/// Writes `data/train.json` under `iter_dir`.
pub fn persist_train(iter_dir: &Path, set: &RolloutSet) -> Result<(), ModelError> {
    set.write(&iter_dir.join("data").join("train.json"))
}
