//! Chat-with-tools over interchangeable backends.

mod http;
mod schema;
mod scripted;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::registry::Registry;

pub use http::{HttpBackend, HttpConfig, Sleeper};
pub use schema::validate as validate_schema;
pub use scripted::{ScriptEntry, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Set on assistant messages that requested a tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into(), tool_call_id: None, tool_call: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_call(call: ToolCall) -> Self {
        ChatMessage { role: Role::Assistant, content: String::new(), tool_call_id: None, tool_call: Some(call) }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Tool, content: content.into(), tool_call_id: Some(call_id.into()), tool_call: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssistantTurn {
    Text { text: String },
    ToolCall { tool_name: String, arguments: Value },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionParams {
    pub temperature: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams { temperature: 0.0 }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("model server returned {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid arguments for `{tool}`: {reason}")]
    InvalidArguments { tool: String, reason: String },
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
    #[error("{}: line {line}: {message}", .path.display())]
    ScriptLoad { path: PathBuf, line: usize, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Config(String),
}

impl LlmError {
    /// The model produced something unusable; the caller may nudge and ask again.
    pub fn is_model_fault(&self) -> bool {
        matches!(self, LlmError::UnknownTool(_) | LlmError::InvalidArguments { .. })
    }
}

pub trait LlmBackend: Send {
    fn name(&self) -> &str;
    fn complete(
        &mut self,
        messages: &[ChatMessage],
        tools: &[ToolDescriptor],
        params: &CompletionParams,
    ) -> Result<AssistantTurn, LlmError>;
}

fn check_request(messages: &[ChatMessage], tools: &[ToolDescriptor]) -> Result<(), LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(LlmError::InvalidRequest("first message must be the system prompt".into()))
        }
        _ => {}
    }
    if let Some(k) = messages.iter().position(|m| m.role == Role::Tool && m.tool_call_id.is_none()) {
        return Err(LlmError::InvalidRequest(format!("tool message #{k} has no tool_call_id")));
    }
    let mut names = HashSet::new();
    for t in tools {
        if !names.insert(t.name.as_str()) {
            return Err(LlmError::InvalidRequest(format!("duplicate tool `{}`", t.name)));
        }
    }
    Ok(())
}

/// Validates a returned tool call against the offered descriptors.
pub fn check_turn(turn: &AssistantTurn, tools: &[ToolDescriptor]) -> Result<(), LlmError> {
    if let AssistantTurn::ToolCall { tool_name, arguments } = turn {
        let d = tools
            .iter()
            .find(|t| &t.name == tool_name)
            .ok_or_else(|| LlmError::UnknownTool(tool_name.clone()))?;
        schema::validate(&d.parameters, arguments)
            .map_err(|reason| LlmError::InvalidArguments { tool: tool_name.clone(), reason })?;
    }
    Ok(())
}

/// A backend plus the request and response checks every backend shares.
pub struct Gateway {
    backend: Box<dyn LlmBackend>,
    pub params: CompletionParams,
}

impl Gateway {
    pub fn new(backend: Box<dyn LlmBackend>) -> Self {
        Gateway { backend, params: CompletionParams::default() }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&mut self, messages: &[ChatMessage], tools: &[ToolDescriptor]) -> Result<AssistantTurn, LlmError> {
        check_request(messages, tools)?;
        let turn = self.backend.complete(messages, tools, &self.params)?;
        check_turn(&turn, tools)?;
        Ok(turn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum BackendSpec {
    Http(HttpConfig),
    Scripted { script_path: PathBuf },
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Http(_) => "http",
            BackendSpec::Scripted { .. } => "scripted",
        }
    }
}

pub type BackendFactory = dyn Fn(&BackendSpec) -> Result<Box<dyn LlmBackend>, LlmError> + Send + Sync;

/// `http` and `scripted`.
pub fn backends() -> Registry<BackendFactory> {
    let mut r: Registry<BackendFactory> = Registry::new("backend");
    r.register(
        "http",
        Box::new(|spec: &BackendSpec| match spec {
            BackendSpec::Http(cfg) => Ok(Box::new(HttpBackend::new(cfg.clone())?) as Box<dyn LlmBackend>),
            _ => Err(LlmError::Config("http backend needs an http spec".into())),
        }),
    );
    r.register(
        "scripted",
        Box::new(|spec: &BackendSpec| match spec {
            BackendSpec::Scripted { script_path } => {
                Ok(Box::new(ScriptedBackend::load(script_path)?) as Box<dyn LlmBackend>)
            }
            _ => Err(LlmError::Config("scripted backend needs a script path".into())),
        }),
    );
    r
}

/// Builds a gateway for `spec` through the backend registry.
pub fn configure(spec: &BackendSpec) -> Result<Gateway, LlmError> {
    let registry = backends();
    let factory = registry.get(spec.kind()).map_err(|e| LlmError::Config(e.to_string()))?;
    let mut g = Gateway::new(factory(spec)?);
    if let BackendSpec::Http(cfg) = spec {
        g.params.temperature = cfg.temperature;
    }
    Ok(g)
}
