//! Everything a run did, in order, as JSON lines.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::state::{Phase, Status};
use crate::llm::{AssistantTurn, ChatMessage};

pub trait Clock: Send {
    fn now_ms(&mut self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&mut self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// Counts up by one per reading, so scripted transcripts are reproducible.
#[derive(Default)]
pub struct LogicalClock(u64);

impl Clock for LogicalClock {
    fn now_ms(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    LlmRequest { phase: Phase, messages: Vec<ChatMessage>, tools: Vec<String> },
    LlmTurn { phase: Phase, turn: AssistantTurn },
    ModelFault { phase: Phase, reason: String },
    ToolCall { phase: Phase, call_id: String, tool: String, arguments: Value },
    ToolResult { call_id: String, tool: String, ok: bool, output: String },
    PhaseTransition { from: Phase, to: Phase, cause: String },
    FinalOutcome { status: Status, detail: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// kb_search calls.
    pub rag_calls: u64,
    /// Every tool call, kb_search included.
    pub tool_calls: u64,
}

impl Counters {
    pub fn of(events: &[TranscriptEvent]) -> Self {
        let mut c = Counters::default();
        for e in events {
            if let EventKind::ToolCall { tool, .. } = &e.kind {
                c.tool_calls += 1;
                if tool == "kb_search" {
                    c.rag_calls += 1;
                }
            }
        }
        c
    }
}

pub struct Transcript {
    events: Vec<TranscriptEvent>,
    counters: Counters,
    clock: Box<dyn Clock>,
}

impl std::fmt::Debug for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transcript").field("events", &self.events.len()).field("counters", &self.counters).finish()
    }
}

impl Transcript {
    pub fn new(clock: Box<dyn Clock>) -> Self {
        Transcript { events: Vec::new(), counters: Counters::default(), clock }
    }

    pub fn push(&mut self, kind: EventKind) {
        if let EventKind::ToolCall { tool, .. } = &kind {
            self.counters.tool_calls += 1;
            if tool == "kb_search" {
                self.counters.rag_calls += 1;
            }
        }
        let seq = self.events.len() as u64;
        let timestamp_ms = self.clock.now_ms();
        self.events.push(TranscriptEvent { seq, timestamp_ms, kind });
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("transcript events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<TranscriptEvent>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }

    /// Phases entered, in order, starting from the first.
    pub fn phases(&self) -> Vec<Phase> {
        let mut out = Vec::new();
        for e in &self.events {
            if let EventKind::PhaseTransition { from, to, .. } = e.kind {
                if out.is_empty() {
                    out.push(from);
                }
                out.push(to);
            }
        }
        out
    }

    /// Names of executed tools, in order.
    pub fn tool_names(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ToolCall { tool, .. } => Some(tool.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn llm_requests(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::LlmRequest { .. })).count()
    }
}
