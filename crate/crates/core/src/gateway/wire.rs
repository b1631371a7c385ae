//! OpenAI-compatible wire shapes.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, ModelEndpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    /// Raw JSON text, as sent by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    #[serde(rename = "type", default = "function_kind")]
    pub kind: String,
    pub function: FunctionCall,
}

fn function_kind() -> String {
    "function".to_string()
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: function_kind(),
            function: FunctionCall { name: name.into(), arguments: arguments.into() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", deserialize_with = "null_as_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

fn null_as_empty<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<ToolCall>, D::Error> {
    Ok(Option::<Vec<ToolCall>>::deserialize(d)?.unwrap_or_default())
}

impl ChatMessage {
    fn plain(role: Role, content: &str) -> Self {
        Self { role, content: Some(content.to_string()), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn system(content: &str) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: &str) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: Option<String>, tool_calls: Vec<ToolCall>) -> Self {
        Self { role: Role::Assistant, content, tool_calls, tool_call_id: None }
    }

    pub fn tool_result(call_id: &str, content: &str) -> Self {
        Self { role: Role::Tool, content: Some(content.to_string()), tool_calls: Vec::new(), tool_call_id: Some(call_id.to_string()) }
    }
}

/// A function tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDefinition {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolDefinition {
    fn to_wire(&self) -> Value {
        json!({
            "type": "function",
            "function": { "name": self.name, "description": self.description, "parameters": self.parameters }
        })
    }
}

pub(super) fn chat_body(endpoint: &ModelEndpoint, messages: &[ChatMessage], tools: &[ToolDefinition], schema: Option<&Value>) -> Value {
    let mut body = json!({
        "model": endpoint.model_id,
        "messages": messages,
        "temperature": endpoint.temperature,
    });
    if !tools.is_empty() {
        body["tools"] = Value::Array(tools.iter().map(ToolDefinition::to_wire).collect());
    }
    if let Some(schema) = schema {
        body["response_format"] = json!({
            "type": "json_schema",
            "json_schema": { "name": "response", "schema": schema }
        });
    }
    body
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(super) fn parse_chat_response(value: Value) -> Result<(ChatMessage, Option<(u64, u64)>), GatewayError> {
    let resp: ChatResponse = serde_json::from_value(value).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    let usage = resp.usage.map(|u| (u.prompt_tokens, u.completion_tokens));
    let choice = resp.choices.into_iter().next().ok_or_else(|| GatewayError::Malformed("no choices".into()))?;
    Ok((choice.message, usage))
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

pub(super) fn parse_embeddings(value: Value, expected: usize) -> Result<Vec<Vec<f64>>, GatewayError> {
    let mut resp: EmbeddingResponse = serde_json::from_value(value).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    if resp.data.len() != expected {
        return Err(GatewayError::Malformed(format!("expected {expected} embeddings, got {}", resp.data.len())));
    }
    resp.data.sort_by_key(|r| r.index);
    Ok(resp.data.into_iter().map(|r| r.embedding).collect())
}
