//! Per-task metrics. A missing prediction (parse failure) is always wrong
//! and contributes no predicted labels.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::parse::ParsedAnswer;
use crate::model::{split_labels, MetricKind, MetricScore, ModelError, RolloutRecord, Target};

pub const POSITIVE_CLASS: &str = "unsafe";

static ATOM_MAP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\[[^\]:]*):\d+\]").expect("atom-map regex"));

/// Lowercase with whitespace runs collapsed.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Reactant multiset with atom-map numbers removed from bracket atoms.
pub fn canonical_reactants(s: &str) -> Vec<String> {
    let stripped: String = s.split_whitespace().collect();
    let unmapped = ATOM_MAP.replace_all(&stripped, "$1]");
    let mut parts: Vec<String> = unmapped.split('.').filter(|p| !p.is_empty()).map(str::to_string).collect();
    parts.sort();
    parts
}

fn is_positive(s: &str) -> bool {
    normalize_text(s) == POSITIVE_CLASS
}

/// Whether one prediction counts as correct under `metric`.
pub fn instance_correct(metric: MetricKind, prediction: Option<&str>, target: &Target) -> bool {
    let Some(pred) = prediction else { return false };
    match metric {
        MetricKind::Accuracy => normalize_text(pred) == normalize_text(&target.as_text()),
        MetricKind::ExactMatch => canonical_reactants(pred) == canonical_reactants(&target.as_text()),
        MetricKind::MicroF1 => split_labels(pred) == target.label_set(),
        MetricKind::BinaryF1 => is_positive(pred) == is_positive(&target.as_text()),
    }
}

/// 2TP / (2TP + FP + FN), with the empty case defined as 1.0.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn score_views<'a>(metric: MetricKind, items: impl ExactSizeIterator<Item = (Option<&'a str>, &'a Target)>) -> Result<MetricScore, ModelError> {
    let n = items.len();
    if n == 0 {
        return Err(ModelError::EmptySplit);
    }
    let value = match metric {
        MetricKind::Accuracy | MetricKind::ExactMatch => {
            let correct = items.filter(|(p, t)| instance_correct(metric, *p, t)).count();
            correct as f64 / n as f64
        }
        MetricKind::MicroF1 => {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (pred, target) in items {
                let predicted: BTreeSet<String> = pred.map(split_labels).unwrap_or_default();
                let actual = target.label_set();
                let hit = predicted.intersection(&actual).count() as u64;
                tp += hit;
                fp += predicted.len() as u64 - hit;
                fn_ += actual.len() as u64 - hit;
            }
            f1(tp, fp, fn_)
        }
        MetricKind::BinaryF1 => {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (pred, target) in items {
                let p = pred.is_some_and(is_positive);
                let a = is_positive(&target.as_text());
                match (p, a) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            f1(tp, fp, fn_)
        }
    };
    MetricScore::new(value, metric, n)
}

pub fn score(metric: MetricKind, pairs: &[(ParsedAnswer, Target)]) -> Result<MetricScore, ModelError> {
    let preds: Vec<Option<String>> = pairs.iter().map(|(p, _)| p.prediction()).collect();
    score_views(metric, preds.iter().zip(pairs).map(|(p, (_, t))| (p.as_deref(), t)))
}

/// Scores stored rollout records; a record with `parse_error` has no prediction.
pub fn score_records(metric: MetricKind, records: &[RolloutRecord]) -> Result<MetricScore, ModelError> {
    score_views(
        metric,
        records.iter().map(|r| (r.parse_error.is_none().then_some(r.llm_answer.as_str()), &r.target)),
    )
}
