//! Parse raw generator replies with each answer format, then score them.

use mce::model::{MetricKind, ParserKind, Target};
use mce::rollout::{parse_answer, score};

fn main() {
    let replies = [
        (ParserKind::JsonTwoField, r#"{"reasoning": "tagged as revenue", "final_answer": "Revenues"}"#),
        (ParserKind::JsonThreeField, r#"{"prompt_harm_label": "none", "reasoning": "benign request", "final_answer": "safe"}"#),
        (ParserKind::DiagnosisTag, "thinking... [DIAGNOSIS]pneumonia[/DIAGNOSIS]"),
        (ParserKind::ChargeTag, "[罪名]盗窃；诈骗<eoa>"),
        (ParserKind::JsonTwoField, "no json here"),
    ];
    for (kind, raw) in replies {
        let p = parse_answer(kind, raw);
        println!("{kind:?}: ok={} value={:?} detail={:?}", p.ok, p.value.to_text(), p.detail);
    }

    // accuracy over JSON answers, case and whitespace insensitive
    let pairs = vec![
        (parse_answer(ParserKind::JsonTwoField, r#"{"reasoning": "", "final_answer": " Revenues "}"#), Target::from("revenues")),
        (parse_answer(ParserKind::JsonTwoField, r#"{"reasoning": "", "final_answer": "Assets"}"#), Target::from("Liabilities")),
    ];
    println!("accuracy: {:.2}", score(MetricKind::Accuracy, &pairs).unwrap().value);

    // micro F1 over predicted charge sets
    let pairs = vec![
        (parse_answer(ParserKind::ChargeTag, "[罪名]盗窃<eoa>"), Target::Labels(vec!["盗窃".into(), "诈骗".into()])),
        (parse_answer(ParserKind::ChargeTag, "[罪名]抢劫；盗窃<eoa>"), Target::Labels(vec!["盗窃".into()])),
    ];
    println!("micro-F1: {:.4}", score(MetricKind::MicroF1, &pairs).unwrap().value);
}
