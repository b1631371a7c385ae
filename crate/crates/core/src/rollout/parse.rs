//! Answer extraction. Every parser takes the last well-formed occurrence,
//! since reasoning text before the answer may quote decoys.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{split_labels, ParserKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Text(String),
    Labels(BTreeSet<String>),
}

impl AnswerValue {
    /// Text form stored in `llm_answer`; label sets join with `;`.
    pub fn to_text(&self) -> String {
        match self {
            AnswerValue::Text(t) => t.clone(),
            AnswerValue::Labels(l) => l.iter().cloned().collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub kind: ParserKind,
    pub value: AnswerValue,
    pub ok: bool,
    pub detail: Option<String>,
}

impl ParsedAnswer {
    fn ok(kind: ParserKind, value: AnswerValue) -> Self {
        Self { kind, value, ok: true, detail: None }
    }

    fn fail(kind: ParserKind, detail: impl Into<String>) -> Self {
        Self { kind, value: AnswerValue::Text(String::new()), ok: false, detail: Some(detail.into()) }
    }

    /// Prediction text, `None` when parsing failed.
    pub fn prediction(&self) -> Option<String> {
        self.ok.then(|| self.value.to_text())
    }
}

pub fn parse_answer(kind: ParserKind, raw: &str) -> ParsedAnswer {
    match kind {
        ParserKind::JsonTwoField => json_answer(kind, raw, |_| true, "final_answer"),
        ParserKind::JsonThreeField => json_answer(
            kind,
            raw,
            |v| matches!(v.trim().to_lowercase().as_str(), "safe" | "unsafe"),
            "final_answer must be safe or unsafe",
        ),
        ParserKind::DiagnosisTag => match last_between(raw, "[DIAGNOSIS]", "[/DIAGNOSIS]") {
            Some(v) if !v.trim().is_empty() => ParsedAnswer::ok(kind, AnswerValue::Text(v.trim().to_string())),
            Some(_) => ParsedAnswer::fail(kind, "empty DIAGNOSIS tag"),
            None => ParsedAnswer::fail(kind, "missing DIAGNOSIS tag"),
        },
        ParserKind::ChargeTag => match last_between(raw, "[罪名]", "<eoa>") {
            Some(v) => {
                let labels = split_labels(v);
                if labels.is_empty() {
                    ParsedAnswer::fail(kind, "empty charge tag")
                } else {
                    ParsedAnswer::ok(kind, AnswerValue::Labels(labels))
                }
            }
            None => ParsedAnswer::fail(kind, "missing charge tag"),
        },
        ParserKind::Raw => {
            let t = raw.trim();
            if t.is_empty() {
                ParsedAnswer::fail(kind, "empty response")
            } else {
                ParsedAnswer::ok(kind, AnswerValue::Text(t.to_string()))
            }
        }
    }
}

/// Inner text of the last `open ... close` pair.
fn last_between<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let end = raw.rfind(close)?;
    let start = raw[..end].rfind(open)? + open.len();
    Some(&raw[start..end])
}

fn answer_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    }
}

/// Scans every `{` for a complete JSON object carrying `final_answer` and
/// keeps the one that ends last.
fn json_answer(kind: ParserKind, raw: &str, accept: impl Fn(&str) -> bool, reject_detail: &str) -> ParsedAnswer {
    let mut best: Option<(usize, String)> = None;
    let mut rejected = false;
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else { continue };
        let end = start + stream.byte_offset();
        let Some(answer) = obj.get("final_answer") else { continue };
        let text = answer_text(answer);
        if !accept(&text) {
            rejected = true;
            continue;
        }
        if best.as_ref().is_none_or(|(e, _)| end > *e) {
            best = Some((end, text));
        }
    }
    match best {
        Some((_, text)) => {
            let text = if kind == ParserKind::JsonThreeField { text.to_lowercase() } else { text };
            ParsedAnswer::ok(kind, AnswerValue::Text(text))
        }
        None if rejected => ParsedAnswer::fail(kind, reject_detail),
        None => ParsedAnswer::fail(kind, "no JSON object with final_answer"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(kind: ParserKind, raw: &str) -> Option<String> {
        parse_answer(kind, raw).prediction()
    }

    #[test]
    fn literal_formats() {
        assert_eq!(text(ParserKind::DiagnosisTag, "Thinking... [DIAGNOSIS]diabetes[/DIAGNOSIS]").as_deref(), Some("diabetes"));
        let charges = parse_answer(ParserKind::ChargeTag, "[罪名]盗窃;诈骗<eoa>");
        assert_eq!(charges.value, AnswerValue::Labels(["盗窃".to_string(), "诈骗".to_string()].into()));
        assert_eq!(
            text(ParserKind::JsonTwoField, r#"{"reasoning":"...","final_answer":"LongTermDebt"}"#).as_deref(),
            Some("LongTermDebt")
        );
        assert_eq!(
            text(ParserKind::JsonThreeField, r#"{"reasoning":"r","final_answer":"unsafe","categories":"Violence"}"#).as_deref(),
            Some("unsafe")
        );
    }

    #[test]
    fn failures_carry_detail() {
        let p = parse_answer(ParserKind::DiagnosisTag, "it is probably the flu");
        assert!(!p.ok);
        assert_eq!(p.detail.as_deref(), Some("missing DIAGNOSIS tag"));
        let p = parse_answer(ParserKind::JsonThreeField, r#"{"final_answer":"maybe"}"#);
        assert_eq!(p.detail.as_deref(), Some("final_answer must be safe or unsafe"));
        assert!(!parse_answer(ParserKind::Raw, "  ").ok);
    }

    #[test]
    fn last_occurrence_wins() {
        let raw = r#"Example: {"final_answer": "Decoy"} so the answer is {"reasoning": "x {y}", "final_answer": "Real"} done"#;
        assert_eq!(text(ParserKind::JsonTwoField, raw).as_deref(), Some("Real"));
        let raw = "[DIAGNOSIS]cold[/DIAGNOSIS] on reflection [DIAGNOSIS]flu[/DIAGNOSIS]";
        assert_eq!(text(ParserKind::DiagnosisTag, raw).as_deref(), Some("flu"));
        let raw = "[罪名]盗窃<eoa> 修正: [罪名]诈骗；抢劫<eoa>";
        assert_eq!(text(ParserKind::ChargeTag, raw).as_deref(), Some("抢劫;诈骗"));
    }

    #[test]
    fn nested_object_does_not_shadow_outer() {
        let raw = r#"{"final_answer": "Outer", "meta": {"final_answer": "Inner"}}"#;
        assert_eq!(text(ParserKind::JsonTwoField, raw).as_deref(), Some("Outer"));
    }
}
