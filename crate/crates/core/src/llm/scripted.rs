use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Deserializer};

use super::{AssistantTurn, ChatMessage, CompletionParams, LlmBackend, LlmError, Role, ToolDescriptor};

fn regex<'de, D: Deserializer<'de>>(d: D) -> Result<Regex, D::Error> {
    let s = String::deserialize(d)?;
    Regex::new(&s).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(rename = "match", deserialize_with = "regex")]
    pub matcher: Regex,
    pub turn: AssistantTurn,
}

/// Replays authored turns strictly in order. Each entry's regex must match
/// the latest user or tool message, otherwise the script is exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend { entries, cursor: 0 }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(text).map_err(|e| LlmError::ScriptLoad {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read script {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(
        &mut self,
        messages: &[ChatMessage],
        _tools: &[ToolDescriptor],
        _params: &CompletionParams,
    ) -> Result<AssistantTurn, LlmError> {
        let Some(entry) = self.entries.get(self.cursor) else {
            return Err(LlmError::ScriptExhausted(format!("all {} turns used", self.entries.len())));
        };
        let last = messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, Role::User | Role::Tool))
            .map_or("", |m| m.content.as_str());
        if !entry.matcher.is_match(last) {
            return Err(LlmError::ScriptExhausted(format!(
                "turn {} expects /{}/, latest message was: {}",
                self.cursor + 1,
                entry.matcher.as_str(),
                last.chars().take(200).collect::<String>()
            )));
        }
        self.cursor += 1;
        Ok(entry.turn.clone())
    }
}
