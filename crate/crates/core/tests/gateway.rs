use std::time::Duration;

use serde_json::json;

use mce::gateway::{cosine_similarity, ChatOutput, ChatRequest, Matcher, MockReply, MockScript, MockServer};
use mce::{Gateway, GatewayConfig, GatewayError};

fn fast() -> GatewayConfig {
    GatewayConfig { retry_backoff: Duration::ZERO, ..GatewayConfig::default() }
}

fn status(code: u16) -> MockReply {
    MockReply::Status { code, message: format!("scripted {code}") }
}

fn limited(mut script: MockScript, matcher: Matcher, reply: MockReply, times: usize) -> MockScript {
    script = script.entry(matcher, reply);
    script.entries.last_mut().unwrap().times = Some(times);
    script
}

#[tokio::test]
async fn transient_failures_are_retried_until_success() {
    let script = limited(MockScript::new(), Matcher::contains("flaky"), status(503), 2).with_default(MockReply::text("fine"));
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("m"), fast());
    let out = gw.chat(&ChatRequest::text("flaky prompt")).await.unwrap();
    assert_eq!(out, ChatOutput::Text("fine".into()));
    assert_eq!(server.stats().attempts_by_prompt["flaky prompt"], 3);
    let usage = gw.usage().totals();
    assert_eq!((usage.requests, usage.failures), (3, 2));
}

#[tokio::test]
async fn retries_are_capped_and_client_errors_are_final() {
    let script = MockScript::new()
        .entry(Matcher::contains("rate"), status(429))
        .entry(Matcher::contains("bad"), status(400))
        .with_default(MockReply::text("ok"));
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("m"), fast());

    let err = gw.chat(&ChatRequest { max_retries: 10, ..ChatRequest::text("rate limited") }).await.unwrap_err();
    assert!(matches!(err, GatewayError::Exhausted { attempts: 3, .. }), "{err}");
    let err = gw.chat(&ChatRequest { max_retries: 1, ..ChatRequest::text("rate once") }).await.unwrap_err();
    assert!(matches!(err, GatewayError::Exhausted { attempts: 1, .. }), "{err}");
    let err = gw.chat(&ChatRequest::text("bad request")).await.unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 400, .. }), "{err}");

    let stats = server.stats();
    assert_eq!(stats.attempts_by_prompt["rate limited"], 3);
    assert_eq!(stats.attempts_by_prompt["rate once"], 1);
    assert_eq!(stats.attempts_by_prompt["bad request"], 1);
}

#[tokio::test]
async fn structured_output_is_validated_and_retried() {
    let schema = json!({
        "type": "object",
        "properties": { "label": { "enum": ["safe", "unsafe"] } },
        "required": ["label"]
    });
    let script = limited(MockScript::new(), Matcher::contains("classify"), MockReply::text("I think it is safe."), 1)
        .entry(Matcher::contains("classify"), MockReply::text("```json\n{\"label\": \"safe\"}\n```"))
        .entry(Matcher::contains("never"), MockReply::Json { value: json!({ "label": "maybe" }) });
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("m"), fast());

    let out = gw.chat(&ChatRequest::structured("classify this", schema.clone())).await.unwrap();
    assert_eq!(out, ChatOutput::Structured(json!({ "label": "safe" })));
    assert_eq!(server.stats().attempts_by_prompt["classify this"], 2);

    let err = gw.chat(&ChatRequest::structured("never valid", schema)).await.unwrap_err();
    match err {
        GatewayError::Exhausted { attempts: 3, last } => assert!(matches!(*last, GatewayError::Schema(_))),
        other => panic!("unexpected {other}"),
    }

    let before = server.stats().requests;
    let err = gw.chat(&ChatRequest::structured("classify", json!({ "type": 17 }))).await.unwrap_err();
    assert!(matches!(err, GatewayError::InvalidSchema(_)), "{err}");
    assert_eq!(server.stats().requests, before);
}

#[tokio::test]
async fn batches_keep_positions_and_isolate_failures() {
    let script = MockScript::new().entry(Matcher::contains("#3"), status(400)).with_default(MockReply::Echo);
    let server = MockServer::start(script).await.unwrap();
    let gw = Gateway::new(server.endpoint("m"), fast());
    let prompts: Vec<ChatRequest> = (0..20).map(|i| ChatRequest::text(format!("prompt #{i}"))).collect();
    let out = gw.chat_batch(&prompts).await.unwrap();
    for (i, r) in out.iter().enumerate() {
        if i == 3 {
            assert!(r.is_err());
        } else {
            assert_eq!(r.as_ref().unwrap().as_text(), format!("prompt #{i}"));
        }
    }
}

#[tokio::test]
async fn embeddings_are_normalized_and_deterministic() {
    let server = MockServer::start(MockScript::new().with_default(MockReply::text("unused"))).await.unwrap();
    let gw = Gateway::new(server.endpoint("e"), GatewayConfig { max_batch: 2, ..fast() });
    let texts: Vec<String> = ["revenue", "net income", "revenue"].iter().map(|s| s.to_string()).collect();
    let rows = gw.embed_batch(&texts).await.unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(server.stats().embedding_requests, 2, "chunked by max_batch");
    for r in &rows {
        assert_eq!(r.len(), 64);
        assert!((r.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(rows[0], rows[2]);
    let sim = cosine_similarity(&rows, &rows).unwrap();
    assert!((sim[0][2] - 1.0).abs() < 1e-9);
    assert!(sim[0][1] < 0.999);

    assert!(matches!(gw.embed_batch(&[]).await, Err(GatewayError::EmptyInput)));
    assert!(matches!(gw.embed_batch(&["".into()]).await, Err(GatewayError::EmptyInput)));
}

#[tokio::test]
async fn slow_endpoint_times_out() {
    let server = MockServer::start(MockScript::new().with_default(MockReply::text("late")).with_latency(300)).await.unwrap();
    let gw = Gateway::new(server.endpoint("m"), GatewayConfig { chat_timeout: Duration::from_millis(50), max_attempts: 2, ..fast() });
    let err = gw.chat(&ChatRequest::text("hurry")).await.unwrap_err();
    match err {
        GatewayError::Exhausted { attempts: 2, last } => assert!(matches!(*last, GatewayError::Timeout(_)), "{last}"),
        other => panic!("unexpected {other}"),
    }
}
