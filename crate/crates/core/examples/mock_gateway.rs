//! Talk to a scripted OpenAI-compatible mock: plain chat, structured output
//! with a schema, a concurrent batch, and embeddings.

use serde_json::json;

use mce::gateway::{cosine_similarity, ChatRequest, Matcher, MockReply, MockScript, MockServer};
use mce::{Gateway, GatewayConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = MockScript::new()
        .entry(Matcher::contains("capital"), MockReply::text("Paris"))
        .entry(Matcher::contains("classify"), MockReply::Json { value: json!({ "label": "safe" }) })
        .with_default(MockReply::Echo)
        .with_latency(5);
    let server = MockServer::start(script).await?;
    println!("mock listening on {}", server.base_url());
    let gw = Gateway::new(server.endpoint("demo/model"), GatewayConfig::default());

    println!("chat: {}", gw.chat(&ChatRequest::text("What is the capital of France?")).await?.as_text());

    let schema = json!({ "type": "object", "required": ["label"], "properties": { "label": { "type": "string" } } });
    println!("structured: {:?}", gw.chat(&ChatRequest::structured("classify: hello", schema)).await?);

    let batch: Vec<ChatRequest> = (0..40).map(|i| ChatRequest::text(format!("echo {i}"))).collect();
    let out = gw.chat_batch(&batch).await?;
    println!("batch: {} replies, first {:?}, peak in flight {}", out.len(), out[0].as_ref().map(|o| o.as_text()), server.stats().peak_in_flight);

    let texts = vec!["net income".to_string(), "revenue".to_string()];
    let rows = gw.embed_batch(&texts).await?;
    println!("cosine: {:?}", cosine_similarity(&rows, &rows)?);
    println!("usage: {:?}", gw.usage().totals());
    Ok(())
}
