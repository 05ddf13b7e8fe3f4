//! Client for the chat-completions wire protocol.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AssistantTurn, ChatMessage, CompletionParams, LlmBackend, LlmError, Role, ToolDescriptor};

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
        }
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    sleeper: Sleeper,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| LlmError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpBackend { config, api_key, client, sleeper: Arc::new(std::thread::sleep) })
    }

    /// Replaces the backoff sleep, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.config.timeout_s)
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn send(&self, body: &Value) -> Result<Value, LlmError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Http { status: status.as_u16(), body: text.chars().take(500).collect() });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Protocol(format!("response is not JSON: {e}")))
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut v = json!({"role": role, "content": m.content});
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    if let Some(call) = &m.tool_call {
        if m.content.is_empty() {
            v["content"] = Value::Null;
        }
        v["tool_calls"] = json!([{
            "id": call.id,
            "type": "function",
            "function": {"name": call.name, "arguments": call.arguments.to_string()},
        }]);
    }
    v
}

/// The request body; the message list is passed through unchanged.
pub fn request_body(model: &str, messages: &[ChatMessage], tools: &[ToolDescriptor], params: &CompletionParams) -> Value {
    let mut body = json!({
        "model": model,
        "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": params.temperature,
    });
    if !tools.is_empty() {
        body["tools"] = tools
            .iter()
            .map(|t| json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameters}}))
            .collect();
        body["tool_choice"] = json!("auto");
    }
    body
}

/// Reads the first choice. Only the first of several tool calls is used,
/// since the workflow executes one tool at a time.
pub fn parse_response(v: &Value) -> Result<AssistantTurn, LlmError> {
    let msg = &v["choices"][0]["message"];
    if !msg.is_object() {
        return Err(LlmError::Protocol("no choices[0].message".into()));
    }
    if let Some(call) = msg["tool_calls"].as_array().and_then(|a| a.first()) {
        let f = &call["function"];
        let name = f["name"].as_str().ok_or_else(|| LlmError::Protocol("tool call without a name".into()))?;
        let arguments = match &f["arguments"] {
            Value::String(s) if s.trim().is_empty() => json!({}),
            Value::String(s) => serde_json::from_str(s).map_err(|e| LlmError::InvalidArguments {
                tool: name.to_string(),
                reason: format!("arguments are not JSON: {e}"),
            })?,
            Value::Null => json!({}),
            other => other.clone(),
        };
        return Ok(AssistantTurn::ToolCall { tool_name: name.to_string(), arguments });
    }
    match msg["content"].as_str() {
        Some(text) => Ok(AssistantTurn::Text { text: text.to_string() }),
        None => Err(LlmError::Protocol("message has neither content nor tool calls".into())),
    }
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(
        &mut self,
        messages: &[ChatMessage],
        tools: &[ToolDescriptor],
        params: &CompletionParams,
    ) -> Result<AssistantTurn, LlmError> {
        let body = request_body(&self.config.model, messages, tools, params);
        let mut attempt = 0;
        loop {
            match self.send(&body) {
                Err(LlmError::Transport(_)) if attempt < self.config.max_retries => {
                    (self.sleeper)(Duration::from_secs(1 << attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
                Ok(v) => return parse_response(&v),
            }
        }
    }
}
