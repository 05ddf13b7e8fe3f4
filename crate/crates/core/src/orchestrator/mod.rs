//! Drives a model through retrieve, generate, check, preprocess, validate
//! and repair, with bounded retries and a full transcript.

mod prompts;
mod state;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::iac::PreprocessMode;
use crate::llm::{AssistantTurn, ChatMessage, Gateway, ToolCall};
use crate::rag::{Collection, Embedder, KnowledgeIndex, DEFAULT_K};
use crate::rego::parse_policy;
use crate::tools::{
    policy_validate, rule_check, CheckResult, Oracle, ToolContext, ToolEffect, ToolRegistry, Verdict,
    DEFAULT_CONTEXT_BUDGET,
};

pub use prompts::{fill, render_prompts, Templates, PLACEHOLDERS};
pub use state::{step, Event, Limits, Phase, Status, WorkflowState};
pub use transcript::{Clock, Counters, EventKind, LogicalClock, SystemClock, Transcript, TranscriptEvent};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("illegal transition: {event} in phase {phase}")]
    IllegalTransition { phase: Phase, event: String },
    #[error("no value for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("{0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    LlmOnly,
    Rag,
    Agentic,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::LlmOnly, Ablation::Rag, Ablation::Agentic];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::LlmOnly => "llm-only",
            Ablation::Rag => "rag",
            Ablation::Agentic => "agentic",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation mode `{s}` (expected llm-only, rag or agentic)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub max_iterations: u32,
    pub max_rule_retries: u32,
    /// Model turns allowed per phase visit before the phase gives up.
    pub phase_turns: u32,
    pub ablation: Ablation,
    pub k: usize,
    pub context_budget: usize,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            max_iterations: 3,
            max_rule_retries: 3,
            phase_turns: 4,
            ablation: Ablation::Agentic,
            k: DEFAULT_K,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

impl WorkflowConfig {
    /// Upper bound on model requests in one run.
    pub fn max_llm_requests(&self) -> u64 {
        let visits = match self.ablation {
            Ablation::Agentic => {
                let (r, i) = (self.max_rule_retries as u64, self.max_iterations as u64);
                1 + r + 2 * (i + 1) + 2 * i
            }
            _ => return 1,
        };
        visits * self.phase_turns as u64
    }

    fn limits(&self) -> Limits {
        match self.ablation {
            Ablation::Agentic => Limits { max_rule_retries: self.max_rule_retries, max_iterations: self.max_iterations },
            _ => Limits { max_rule_retries: 1, max_iterations: 0 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkflowRequest {
    pub policy_prompt: String,
    pub infra_path: PathBuf,
    pub preprocess_mode: PreprocessMode,
    pub config: WorkflowConfig,
}

/// Collaborators a run borrows or consumes.
pub struct Runtime<'a> {
    pub index: Option<&'a KnowledgeIndex>,
    pub embedder: &'a dyn Embedder,
    pub oracle: Box<dyn Oracle>,
    pub templates: Templates,
    pub clock: Box<dyn Clock>,
    pub terraform_bin: Option<PathBuf>,
    pub cache_plans: bool,
}

impl<'a> Runtime<'a> {
    pub fn new(index: Option<&'a KnowledgeIndex>, embedder: &'a dyn Embedder, oracle: Box<dyn Oracle>) -> Self {
        Runtime {
            index,
            embedder,
            oracle,
            templates: Templates::builtin(),
            clock: Box::new(SystemClock),
            terraform_bin: None,
            cache_plans: false,
        }
    }
}

#[derive(Debug)]
pub struct WorkflowOutcome {
    pub status: Status,
    pub detail: Option<String>,
    /// The accepted policy, or the last one submitted when none was accepted.
    pub policy_source: Option<String>,
    pub infra_source: String,
    pub infra_modified: bool,
    /// Whether the final policy parsed.
    pub syntax_ok: bool,
    /// Whether the oracle accepted the final policy.
    pub semantic_ok: bool,
    pub final_verdict: Option<Verdict>,
    pub rule_attempts: u32,
    pub repair_iterations: u32,
    pub transcript: Transcript,
}

/// The tool a phase exists to call, and the extra tools it tolerates.
pub fn phase_tools(phase: Phase) -> Option<(&'static str, &'static [&'static str])> {
    match phase {
        Phase::RetrieveOpa | Phase::RetrieveIac => Some(("kb_search", &[])),
        Phase::GenerateRules => Some(("rule_check", &["kb_search"])),
        Phase::Preprocess => Some(("preprocess_infra", &[])),
        Phase::Validate => Some(("policy_validate", &[])),
        Phase::PatchInfra => Some(("patch_infra", &["kb_search"])),
        Phase::CheckRules | Phase::Done | Phase::Failed => None,
    }
}

/// Pulls the policy out of a free-text reply: the first fenced block if
/// there is one, the whole reply otherwise.
pub fn extract_policy(text: &str) -> String {
    if let Some(start) = text.find("```") {
        let rest = &text[start + 3..];
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim().to_string() + "\n";
    }
    text.trim().to_string() + "\n"
}

struct Runner<'r, 'a> {
    config: WorkflowConfig,
    gateway: &'r mut Gateway,
    tools: &'r ToolRegistry,
    ctx: ToolContext<'a>,
    templates: Templates,
    transcript: Transcript,
    calls: u64,
    opa_context: String,
    iac_context: String,
    diagnostics: String,
    traces: String,
    submitted: Option<String>,
    pending: Option<CheckResult>,
    last_check: Option<CheckResult>,
    verdict: Option<Verdict>,
}

pub fn run(
    request: &WorkflowRequest,
    gateway: &mut Gateway,
    tools: &ToolRegistry,
    rt: Runtime<'_>,
) -> Result<WorkflowOutcome, OrchestratorError> {
    let config = request.config;
    if config.max_iterations < 1 || config.max_rule_retries < 1 || config.phase_turns < 1 {
        return Err(OrchestratorError::Precondition(
            "max_iterations, max_rule_retries and phase_turns must be at least 1".into(),
        ));
    }
    if config.ablation != Ablation::LlmOnly && rt.index.is_none() {
        return Err(OrchestratorError::Precondition(format!("{} mode needs a knowledge base index", config.ablation)));
    }
    let mut ctx = ToolContext::new(
        request.policy_prompt.clone(),
        request.infra_path.clone(),
        request.preprocess_mode.preprocessor(rt.terraform_bin.as_deref()),
        rt.embedder,
        rt.oracle,
    );
    ctx.index = rt.index;
    ctx.k = config.k;
    ctx.context_budget = config.context_budget;
    ctx.cache_plans = rt.cache_plans;
    let runner = Runner {
        config,
        gateway,
        tools,
        ctx,
        templates: rt.templates,
        transcript: Transcript::new(rt.clock),
        calls: 0,
        opa_context: String::new(),
        iac_context: String::new(),
        diagnostics: String::new(),
        traces: String::new(),
        submitted: None,
        pending: None,
        last_check: None,
        verdict: None,
    };
    runner.drive()
}

impl Runner<'_, '_> {
    fn drive(mut self) -> Result<WorkflowOutcome, OrchestratorError> {
        let limits = self.config.limits();
        let mut state = WorkflowState::start(self.config.ablation != Ablation::LlmOnly);
        let mut detail = None;
        while !state.phase.is_terminal() {
            let event = match self.config.ablation {
                Ablation::Agentic => self.agentic(state.phase)?,
                _ => self.single_shot(state.phase)?,
            };
            if let Event::Fault { message } = &event {
                detail = Some(message.clone());
            }
            let next = step(&state, &event, limits)?;
            self.transcript.push(EventKind::PhaseTransition { from: state.phase, to: next.phase, cause: event.to_string() });
            state = next;
        }
        let status = state.status.unwrap_or(Status::Error);
        if detail.is_none() && status != Status::Compliant {
            detail = Some(match status {
                Status::RuleGenerationFailed => format!("no acceptable rule after {} attempt(s)", state.rule_attempts),
                Status::NonCompliantGaveUp => format!("still non-compliant after {} repair iteration(s)", state.repair_iterations),
                _ => "phase turn budget exhausted".to_string(),
            });
        }
        self.transcript.push(EventKind::FinalOutcome { status, detail: detail.clone() });
        let policy_source = self.ctx.policy.as_ref().map(|(s, _)| s.clone()).or(self.submitted);
        let infra_source = self.ctx.infra_source();
        Ok(WorkflowOutcome {
            status,
            detail,
            policy_source,
            infra_source,
            infra_modified: self.ctx.patches_applied > 0,
            syntax_ok: self.last_check.as_ref().is_some_and(|c| c.syntax_ok),
            semantic_ok: self.last_check.as_ref().is_some_and(CheckResult::accepted),
            final_verdict: self.verdict,
            rule_attempts: state.rule_attempts,
            repair_iterations: state.repair_iterations,
            transcript: self.transcript,
        })
    }

    fn slots(&self, phase: Phase) -> BTreeMap<&'static str, String> {
        let mut s = BTreeMap::from([("policy_prompt", self.ctx.policy_prompt.clone())]);
        match phase {
            Phase::GenerateRules => {
                s.insert("retrieved_context", self.opa_context.clone());
                s.insert("diagnostics", self.diagnostics.clone());
            }
            Phase::RetrieveIac => {
                s.insert("verdict_traces", self.traces.clone());
            }
            Phase::PatchInfra => {
                s.insert("verdict_traces", self.traces.clone());
                s.insert("retrieved_context", self.iac_context.clone());
                s.insert("infra_source", self.ctx.infra_source());
            }
            _ => {}
        }
        s
    }

    fn next_call_id(&mut self) -> String {
        self.calls += 1;
        format!("call_{}", self.calls)
    }

    fn fault(&mut self, phase: Phase, reason: String) {
        self.transcript.push(EventKind::ModelFault { phase, reason });
    }

    fn check_submitted(&mut self, source: &str, result: CheckResult) -> Result<(), String> {
        if result.accepted() {
            let doc = parse_policy(source).map_err(|_| "accepted policy failed to parse".to_string())?;
            self.ctx.policy = Some((source.to_string(), doc));
        } else {
            self.diagnostics = format!("{}\n\nPrevious attempt:\n{}", result.feedback(), source.trim_end());
        }
        self.submitted = Some(source.to_string());
        self.pending = Some(result);
        Ok(())
    }

    fn checked(&mut self) -> Event {
        match self.pending.take() {
            Some(result) => {
                let accepted = result.accepted();
                self.last_check = Some(result);
                Event::RuleChecked { accepted }
            }
            None => Event::Fault { message: "internal: no submitted rule to check".into() },
        }
    }

    fn absorb(&mut self, effect: ToolEffect, args: &Value) -> Event {
        match effect {
            ToolEffect::Retrieved { collection, context } => {
                match collection {
                    Collection::Opa => self.opa_context = context,
                    Collection::Iac => self.iac_context = context,
                }
                Event::Retrieved
            }
            ToolEffect::Checked(result) => {
                let source = args["policy_source"].as_str().unwrap_or_default().to_string();
                match self.check_submitted(&source, result) {
                    Ok(()) => Event::RuleSubmitted,
                    Err(message) => Event::Fault { message },
                }
            }
            ToolEffect::Preprocessed => Event::Preprocessed,
            ToolEffect::Validated(v) => {
                let compliant = v.compliant;
                if !compliant {
                    self.traces = v.feedback();
                }
                self.verdict = Some(v);
                Event::Validated { compliant }
            }
            ToolEffect::Patched => Event::PatchAccepted,
        }
    }

    fn agentic(&mut self, phase: Phase) -> Result<Event, OrchestratorError> {
        if phase == Phase::CheckRules {
            return Ok(self.checked());
        }
        let (goal, aux) = phase_tools(phase).ok_or_else(|| OrchestratorError::Precondition(format!("phase {phase} runs no tools")))?;
        self.ctx.default_collection = match phase {
            Phase::RetrieveIac | Phase::PatchInfra => Collection::Iac,
            _ => Collection::Opa,
        };
        let mut messages = render_prompts(&self.templates, phase, &self.slots(phase))?;
        let descriptors = self.tools.descriptors();
        let names = self.tools.names();
        let nudge = |why: &str| format!("Your last reply could not be used: {why}. Continue by calling {goal}.");
        for _ in 0..self.config.phase_turns {
            self.transcript.push(EventKind::LlmRequest { phase, messages: messages.clone(), tools: names.clone() });
            let turn = match self.gateway.complete(&messages, &descriptors) {
                Ok(t) => t,
                Err(e) if e.is_model_fault() => {
                    self.fault(phase, e.to_string());
                    messages.push(ChatMessage::user(nudge(&e.to_string())));
                    continue;
                }
                Err(e) => return Ok(Event::Fault { message: format!("model request failed: {e}") }),
            };
            self.transcript.push(EventKind::LlmTurn { phase, turn: turn.clone() });
            let (name, arguments) = match turn {
                AssistantTurn::Text { text } => {
                    let why = "a text reply instead of a tool call";
                    self.fault(phase, why.into());
                    messages.push(ChatMessage::assistant(text));
                    messages.push(ChatMessage::user(nudge(why)));
                    continue;
                }
                AssistantTurn::ToolCall { tool_name, arguments } => (tool_name, arguments),
            };
            let call = ToolCall { id: self.next_call_id(), name: name.clone(), arguments: arguments.clone() };
            messages.push(ChatMessage::assistant_tool_call(call.clone()));
            if name != goal && !aux.contains(&name.as_str()) {
                let why = format!("`{name}` cannot be used at this step");
                self.fault(phase, why.clone());
                messages.push(ChatMessage::tool(&call.id, nudge(&why)));
                continue;
            }
            self.transcript.push(EventKind::ToolCall { phase, call_id: call.id.clone(), tool: name.clone(), arguments: arguments.clone() });
            match self.tools.dispatch(&name, &arguments, &mut self.ctx) {
                Err(e) => {
                    self.transcript.push(EventKind::ToolResult { call_id: call.id.clone(), tool: name, ok: false, output: e.message.clone() });
                    if e.fatal {
                        return Ok(Event::Fault { message: e.message });
                    }
                    messages.push(ChatMessage::tool(&call.id, e.message));
                }
                Ok(out) => {
                    self.transcript.push(EventKind::ToolResult { call_id: call.id.clone(), tool: name.clone(), ok: true, output: out.text.clone() });
                    if name == goal {
                        return Ok(self.absorb(out.effect, &arguments));
                    }
                    messages.push(ChatMessage::tool(&call.id, out.text));
                }
            }
        }
        Ok(Event::BudgetExhausted)
    }

    /// The llm-only and rag configurations: one generation, then the same
    /// checks applied outside the model's view.
    fn single_shot(&mut self, phase: Phase) -> Result<Event, OrchestratorError> {
        Ok(match phase {
            Phase::RetrieveOpa => {
                let id = self.next_call_id();
                let arguments = json!({"query": self.ctx.policy_prompt, "collection": "opa"});
                self.transcript.push(EventKind::ToolCall { phase, call_id: id.clone(), tool: "kb_search".into(), arguments: arguments.clone() });
                match self.tools.dispatch("kb_search", &arguments, &mut self.ctx) {
                    Ok(out) => {
                        self.transcript.push(EventKind::ToolResult { call_id: id, tool: "kb_search".into(), ok: true, output: out.text.clone() });
                        self.absorb(out.effect, &arguments)
                    }
                    Err(e) => {
                        self.transcript.push(EventKind::ToolResult { call_id: id, tool: "kb_search".into(), ok: false, output: e.message.clone() });
                        if e.fatal {
                            Event::Fault { message: e.message }
                        } else {
                            Event::Retrieved
                        }
                    }
                }
            }
            Phase::GenerateRules => {
                let messages = render_prompts(&self.templates, phase, &self.slots(phase))?;
                self.transcript.push(EventKind::LlmRequest { phase, messages: messages.clone(), tools: Vec::new() });
                match self.gateway.complete(&messages, &[]) {
                    Ok(turn) => {
                        self.transcript.push(EventKind::LlmTurn { phase, turn: turn.clone() });
                        match turn {
                            AssistantTurn::Text { text } => {
                                self.submitted = Some(extract_policy(&text));
                                Event::RuleSubmitted
                            }
                            AssistantTurn::ToolCall { .. } => {
                                self.fault(phase, "tool call without tools".into());
                                Event::BudgetExhausted
                            }
                        }
                    }
                    Err(e) if e.is_model_fault() => {
                        self.fault(phase, e.to_string());
                        Event::BudgetExhausted
                    }
                    Err(e) => Event::Fault { message: format!("model request failed: {e}") },
                }
            }
            Phase::CheckRules => {
                let source = self.submitted.clone().unwrap_or_default();
                let prompt = self.ctx.policy_prompt.clone();
                match rule_check(&source, &prompt, self.ctx.oracle.as_mut()) {
                    Ok(result) => match self.check_submitted(&source, result) {
                        Ok(()) => self.checked(),
                        Err(message) => Event::Fault { message },
                    },
                    Err(e) => Event::Fault { message: e.message },
                }
            }
            Phase::Preprocess => match self.ctx.preprocessor.plan(&self.ctx.infra_path) {
                Ok(plan) => {
                    self.ctx.plan = Some(plan);
                    Event::Preprocessed
                }
                Err(e) => Event::Fault { message: e.to_string() },
            },
            Phase::Validate => {
                let (Some((_, policy)), Some(plan)) = (&self.ctx.policy, &self.ctx.plan) else {
                    return Ok(Event::Fault { message: "internal: validation without policy or plan".into() });
                };
                match policy_validate(policy, plan) {
                    Ok(v) => self.absorb(ToolEffect::Validated(v), &Value::Null),
                    Err(e) => Event::Fault { message: e.message },
                }
            }
            other => Event::Fault { message: format!("internal: phase {other} outside the agentic configuration") },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_policy_is_extracted() {
        let text = "Here it is:\n```rego\npackage terraform\n```\nThanks";
        assert_eq!(extract_policy(text), "package terraform\n");
        assert_eq!(extract_policy("  package p  "), "package p\n");
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("full".parse::<Ablation>().is_err());
    }

    #[test]
    fn request_bound_grows_with_caps() {
        let c = WorkflowConfig::default();
        assert_eq!(c.max_llm_requests(), (1 + 3 + 8 + 6) * 4);
        let single = WorkflowConfig { ablation: Ablation::Rag, ..c };
        assert_eq!(single.max_llm_requests(), 1);
    }
}
