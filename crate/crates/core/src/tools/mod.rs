//! The tools a model may call, and the state they share during one run.

mod oracle;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::diag::{Diagnostic, Severity};
use crate::iac::{apply_patch, load_infra, write_cache, IacError, PlanDocument, Preprocessor};
use crate::llm::ToolDescriptor;
use crate::rag::{Collection, Embedder, KnowledgeIndex, DEFAULT_K};
use crate::rego::{check_syntax, parse_policy, Evaluator, PolicyDocument, ViolationTrace};
use crate::registry::Registry;

pub use oracle::{
    oracle_from_spec, oracles, policy_hash, AutoAccept, FileOracle, Interactive, Oracle, OracleDecision,
    OracleFactory, RecordedDecision, RecordedVerdict,
};

pub const DEFAULT_CONTEXT_BUDGET: usize = 6000;

/// A failed tool call. Unless `fatal`, the message goes back to the model
/// as the tool result so it can correct itself.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ToolError {
    pub message: String,
    pub fatal: bool,
}

impl ToolError {
    pub fn recoverable(message: impl Into<String>) -> Self {
        ToolError { message: message.into(), fatal: false }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        ToolError { message: message.into(), fatal: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleVerdict {
    Accepted,
    Rejected,
    NotConsulted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub syntax_ok: bool,
    pub diagnostics: Vec<Diagnostic>,
    pub oracle_verdict: OracleVerdict,
    pub oracle_note: Option<String>,
}

impl CheckResult {
    pub fn accepted(&self) -> bool {
        self.syntax_ok && self.oracle_verdict == OracleVerdict::Accepted
    }

    /// What the model is told.
    pub fn feedback(&self) -> String {
        let mut s = String::new();
        if self.syntax_ok {
            s.push_str("syntax: ok\n");
        } else {
            let _ = writeln!(s, "syntax: {} error(s)", self.diagnostics.len());
            for d in &self.diagnostics {
                let _ = writeln!(s, "policy.rego:{d}");
            }
        }
        match self.oracle_verdict {
            OracleVerdict::Accepted => s.push_str("review: accepted"),
            OracleVerdict::Rejected => s.push_str("review: rejected"),
            OracleVerdict::NotConsulted => s.push_str("review: not consulted (fix the syntax first)"),
        }
        if let Some(n) = &self.oracle_note {
            let _ = write!(s, "\nreviewer note: {n}");
        }
        s
    }
}

/// Syntax first; the oracle only sees rules that parse.
pub fn rule_check(policy_source: &str, policy_prompt: &str, oracle: &mut dyn Oracle) -> Result<CheckResult, ToolError> {
    let diagnostics = check_syntax(policy_source);
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return Ok(CheckResult {
            syntax_ok: false,
            diagnostics,
            oracle_verdict: OracleVerdict::NotConsulted,
            oracle_note: None,
        });
    }
    let d = oracle.review(policy_prompt, policy_source)?;
    Ok(CheckResult {
        syntax_ok: true,
        diagnostics,
        oracle_verdict: if d.accepted { OracleVerdict::Accepted } else { OracleVerdict::Rejected },
        oracle_note: d.note,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub compliant: bool,
    pub deny_messages: BTreeSet<String>,
    pub traces: Vec<ViolationTrace>,
}

impl Verdict {
    pub fn feedback(&self) -> String {
        if self.compliant {
            return "compliant: the plan satisfies every rule".into();
        }
        let mut s = format!("non-compliant: {} violation(s)\n", self.deny_messages.len());
        for m in &self.deny_messages {
            let _ = writeln!(s, "- {m}");
        }
        s.push_str("traces:\n");
        for t in &self.traces {
            let _ = writeln!(s, "  {t}");
        }
        s.trim_end().to_string()
    }
}

pub fn policy_validate(policy: &PolicyDocument, plan: &PlanDocument) -> Result<Verdict, ToolError> {
    let ev = Evaluator::default();
    let err = |e: crate::rego::EvalError| ToolError::fatal(format!("evaluation aborted: {e}"));
    let deny_messages = ev.evaluate(policy, plan.root()).map_err(err)?;
    let traces = ev.explain(policy, plan.root()).map_err(err)?;
    Ok(Verdict { compliant: deny_messages.is_empty(), deny_messages, traces })
}

/// Resource count, addresses and top-level value keys.
pub fn plan_summary(plan: &PlanDocument) -> String {
    let n = plan.resources().len();
    let mut s = format!("{n} resource{}", if n == 1 { "" } else { "s" });
    for r in plan.resources() {
        let keys: Vec<&str> = r.values.as_object().map(|o| o.keys().map(String::as_str).collect()).unwrap_or_default();
        let _ = write!(s, "\n- {} (keys: {})", r.address, keys.join(", "));
    }
    s
}

/// Joins hits in rank order, dropping the lowest-ranked ones until the text
/// fits `budget` characters. A lone oversized hit is cut.
pub fn format_context(hits: &[crate::rag::RetrievalHit], budget: usize) -> String {
    let blocks: Vec<String> = hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            format!(
                "[{}] {} (chars {}-{}, score {:.3})\n{}\n",
                i + 1,
                h.chunk.doc_path,
                h.chunk.char_range[0],
                h.chunk.char_range[1],
                h.score,
                h.chunk.body.trim_end()
            )
        })
        .collect();
    let mut keep = blocks.len();
    let size = |n: usize| blocks[..n].iter().map(|b| b.chars().count() + 1).sum::<usize>();
    while keep > 1 && size(keep) > budget {
        keep -= 1;
    }
    let text = blocks[..keep].join("\n");
    if text.chars().count() > budget {
        text.chars().take(budget).collect()
    } else {
        text
    }
}

/// Everything the tools read or update during one run.
pub struct ToolContext<'a> {
    pub policy_prompt: String,
    pub infra_path: PathBuf,
    pub preprocessor: Box<dyn Preprocessor>,
    pub index: Option<&'a KnowledgeIndex>,
    pub embedder: &'a dyn Embedder,
    pub oracle: Box<dyn Oracle>,
    pub k: usize,
    pub context_budget: usize,
    /// Used when a kb_search call names no collection.
    pub default_collection: Collection,
    /// Write each plan beside the infrastructure file.
    pub cache_plans: bool,
    /// Rule most recently accepted by rule_check.
    pub policy: Option<(String, PolicyDocument)>,
    /// Plan of the current infrastructure; cleared by every accepted patch.
    pub plan: Option<PlanDocument>,
    pub patches_applied: usize,
}

impl<'a> ToolContext<'a> {
    pub fn new(
        policy_prompt: impl Into<String>,
        infra_path: impl Into<PathBuf>,
        preprocessor: Box<dyn Preprocessor>,
        embedder: &'a dyn Embedder,
        oracle: Box<dyn Oracle>,
    ) -> Self {
        ToolContext {
            policy_prompt: policy_prompt.into(),
            infra_path: infra_path.into(),
            preprocessor,
            index: None,
            embedder,
            oracle,
            k: DEFAULT_K,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            default_collection: Collection::Opa,
            cache_plans: false,
            policy: None,
            plan: None,
            patches_applied: 0,
        }
    }

    pub fn search(&self, query: &str, collection: Collection) -> Result<String, ToolError> {
        let index = self.index.ok_or_else(|| ToolError::recoverable(format!("knowledge base '{collection}' is empty")))?;
        let hits = index
            .query(self.embedder, query, collection, self.k)
            .map_err(|e| ToolError::recoverable(e.to_string()))?;
        Ok(format_context(&hits, self.context_budget))
    }

    pub fn infra_source(&self) -> String {
        std::fs::read_to_string(&self.infra_path).unwrap_or_default()
    }
}

/// What a successful call changed, for the orchestrator.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolEffect {
    Retrieved { collection: Collection, context: String },
    Checked(CheckResult),
    Preprocessed,
    Validated(Verdict),
    Patched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub text: String,
    pub effect: ToolEffect,
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> ToolDescriptor;
    fn execute(&self, args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError>;
}

fn str_arg<'v>(args: &'v Value, name: &str) -> Result<&'v str, ToolError> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::recoverable(format!("missing string argument `{name}`")))
}

pub struct KbSearch;

impl Tool for KbSearch {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "kb_search".into(),
            description: "Search the knowledge base. Collection `opa` holds Rego and OPA documentation, `iac` holds Terraform and provider documentation.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "What to look for"},
                    "collection": {"type": "string", "enum": ["opa", "iac"]}
                },
                "required": ["query"]
            }),
        }
    }

    fn execute(&self, args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let query = str_arg(args, "query")?;
        let collection = match args.get("collection").and_then(Value::as_str) {
            Some(c) => c.parse().map_err(|e: crate::rag::RagError| ToolError::recoverable(e.to_string()))?,
            None => ctx.default_collection,
        };
        let context = ctx.search(query, collection)?;
        Ok(ToolOutput { text: context.clone(), effect: ToolEffect::Retrieved { collection, context } })
    }
}

pub struct RuleCheck;

impl Tool for RuleCheck {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "rule_check".into(),
            description: "Submit a complete Rego policy. Its syntax is checked and a reviewer decides whether it matches the requested policy.".into(),
            parameters: json!({
                "type": "object",
                "properties": {"policy_source": {"type": "string", "description": "The whole .rego file"}},
                "required": ["policy_source"]
            }),
        }
    }

    fn execute(&self, args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let source = str_arg(args, "policy_source")?;
        let prompt = ctx.policy_prompt.clone();
        let result = rule_check(source, &prompt, ctx.oracle.as_mut())?;
        if result.accepted() {
            let doc = parse_policy(source).map_err(|_| ToolError::fatal("accepted policy failed to parse"))?;
            ctx.policy = Some((source.to_string(), doc));
        }
        Ok(ToolOutput { text: result.feedback(), effect: ToolEffect::Checked(result) })
    }
}

pub struct PreprocessInfra;

impl Tool for PreprocessInfra {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "preprocess_infra".into(),
            description: "Produce the execution plan of the infrastructure under review.".into(),
            parameters: json!({"type": "object", "properties": {}}),
        }
    }

    fn execute(&self, _args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let plan = ctx.preprocessor.plan(&ctx.infra_path).map_err(|e| match &e {
            IacError::Syntax { diagnostics, .. } if !diagnostics.is_empty() => {
                ToolError::recoverable(format!("{}: {}", ctx.infra_path.display(), diagnostics[0]))
            }
            IacError::ExternalToolUnavailable(_) => ToolError::fatal(e.to_string()),
            _ => ToolError::recoverable(e.to_string()),
        })?;
        if ctx.cache_plans {
            write_cache(&ctx.infra_path, &plan).map_err(|e| ToolError::fatal(e.to_string()))?;
        }
        let text = plan_summary(&plan);
        ctx.plan = Some(plan);
        Ok(ToolOutput { text, effect: ToolEffect::Preprocessed })
    }
}

pub struct PolicyValidate;

impl Tool for PolicyValidate {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "policy_validate".into(),
            description: "Evaluate the accepted policy against the current execution plan.".into(),
            parameters: json!({"type": "object", "properties": {}}),
        }
    }

    fn execute(&self, _args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let (_, policy) = ctx.policy.as_ref().ok_or_else(|| ToolError::recoverable("no accepted policy yet; call rule_check first"))?;
        let plan = ctx.plan.as_ref().ok_or_else(|| ToolError::recoverable("no current plan; call preprocess_infra first"))?;
        let verdict = policy_validate(policy, plan)?;
        Ok(ToolOutput { text: verdict.feedback(), effect: ToolEffect::Validated(verdict) })
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, keeping the previous contents at `<path>.bak`.
pub fn replace_file(path: &Path, contents: &str) -> std::io::Result<PathBuf> {
    use std::io::Write;
    let mut bak = path.as_os_str().to_os_string();
    bak.push(".bak");
    let bak = PathBuf::from(bak);
    std::fs::copy(path, &bak)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(bak)
}

pub struct PatchInfra;

impl Tool for PatchInfra {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "patch_infra".into(),
            description: "Replace the whole Terraform file with a corrected version. Every resource must be kept.".into(),
            parameters: json!({
                "type": "object",
                "properties": {"new_source": {"type": "string", "description": "The complete new .tf file"}},
                "required": ["new_source"]
            }),
        }
    }

    fn execute(&self, args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let new_source = str_arg(args, "new_source")?;
        if ctx.infra_path.is_dir() {
            return Err(ToolError::fatal("patching needs a single .tf file, not a directory"));
        }
        let original = load_infra(&ctx.infra_path).map_err(|e| ToolError::recoverable(e.to_string()))?;
        apply_patch(&original, new_source).map_err(|e| {
            let mut msg = format!("patch rejected: {e}");
            if let IacError::Syntax { diagnostics, .. } = &e {
                msg = String::from("patch rejected:");
                for d in diagnostics {
                    let _ = write!(msg, "\npatch.tf:{d}");
                }
            }
            ToolError::recoverable(msg)
        })?;
        let bak = replace_file(&ctx.infra_path, new_source)
            .map_err(|e| ToolError::fatal(format!("cannot write {}: {e}", ctx.infra_path.display())))?;
        ctx.plan = None;
        ctx.patches_applied += 1;
        Ok(ToolOutput {
            text: format!("patch accepted: {} updated (previous version at {})", ctx.infra_path.display(), bak.display()),
            effect: ToolEffect::Patched,
        })
    }
}

/// Tools keyed by the name in their descriptor.
pub struct ToolRegistry {
    inner: Registry<dyn Tool>,
}

impl ToolRegistry {
    pub fn empty() -> Self {
        ToolRegistry { inner: Registry::new("tool") }
    }

    /// kb_search, rule_check, preprocess_infra, policy_validate, patch_infra.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(KbSearch));
        r.register(Box::new(RuleCheck));
        r.register(Box::new(PreprocessInfra));
        r.register(Box::new(PolicyValidate));
        r.register(Box::new(PatchInfra));
        r
    }

    pub fn register(&mut self, tool: Box<dyn Tool>) {
        let name = tool.descriptor().name;
        self.inner.register(name, tool);
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.inner.iter().map(|(_, t)| t.descriptor()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.names()
    }

    pub fn dispatch(&self, name: &str, args: &Value, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
        let tool = self.inner.get(name).map_err(|e| ToolError::recoverable(e.to_string()))?;
        tool.execute(args, ctx)
    }
}
