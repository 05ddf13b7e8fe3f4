//! Runs scenario suites across configurations and tabulates the results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iac::PreprocessMode;
use crate::llm::{configure, BackendSpec, LlmError};
use crate::orchestrator::{
    run, Ablation, Clock, LogicalClock, OrchestratorError, Runtime, Status, SystemClock, WorkflowConfig,
    WorkflowOutcome, WorkflowRequest,
};
use crate::rag::{ChunkParams, Collection, Embedder, KnowledgeIndex, Lexical, RagError};
use crate::tools::{oracle_from_spec, ToolRegistry};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("suite {}: {message}", .path.display())]
    Suite { path: PathBuf, message: String },
    #[error("scenario fixture missing: {}", .0.display())]
    MissingFixture(PathBuf),
    #[error("scenario {scenario} ({configuration}): {source}")]
    Llm { scenario: String, configuration: Ablation, source: LlmError },
    #[error("scenario {scenario} ({configuration}): {source}")]
    Orchestrator { scenario: String, configuration: Ablation, source: OrchestratorError },
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("oracle: {0}")]
    Oracle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub syntax_ok: bool,
    pub semantic_ok: bool,
    pub final_compliant: bool,
    pub infra_modified: bool,
}

impl Expectation {
    fn consistent(&self) -> bool {
        (!self.semantic_ok || self.syntax_ok) && (!self.final_compliant || self.semantic_ok)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub policy_prompt: String,
    pub infra: PathBuf,
    /// Whether the initial infrastructure already satisfies the prompt.
    pub infra_compatible: bool,
    #[serde(default)]
    pub scripts: BTreeMap<Ablation, PathBuf>,
    pub expected: BTreeMap<Ablation, Expectation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub name: String,
    /// Label for the Model column.
    pub model: String,
    /// `auto`, `interactive` or `file:PATH` (relative to the suite file).
    pub oracle: String,
    /// Documents to index, per collection.
    #[serde(default)]
    pub kb: BTreeMap<Collection, Vec<PathBuf>>,
    /// A saved index, used instead of `kb`.
    #[serde(default)]
    pub kb_index: Option<PathBuf>,
    /// A live backend, used instead of scenario scripts.
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    pub configurations: Vec<Ablation>,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub workflow: WorkflowConfig,
}

impl Suite {
    pub fn load(path: &Path) -> Result<(Suite, PathBuf), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        let suite: Suite = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Suite { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        suite.check(path, &base)?;
        Ok((suite, base))
    }

    fn check(&self, path: &Path, base: &Path) -> Result<(), HarnessError> {
        let bad = |message: String| HarnessError::Suite { path: path.to_path_buf(), message };
        if self.configurations.is_empty() || self.scenarios.is_empty() {
            return Err(bad("needs at least one configuration and one scenario".into()));
        }
        for s in &self.scenarios {
            for c in &self.configurations {
                let e = s.expected.get(c).ok_or_else(|| bad(format!("scenario {} has no expectation for {c}", s.name)))?;
                if !e.consistent() {
                    return Err(bad(format!("scenario {} ({c}): inconsistent expectation", s.name)));
                }
                if self.backend.is_none() {
                    let script = s.scripts.get(c).ok_or_else(|| bad(format!("scenario {} has no {c} script", s.name)))?;
                    exists(&base.join(script))?;
                }
            }
            exists(&base.join(&s.infra))?;
        }
        for docs in self.kb.values() {
            for d in docs {
                exists(&base.join(d))?;
            }
        }
        Ok(())
    }
}

fn exists(path: &Path) -> Result<(), HarnessError> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingFixture(path.to_path_buf()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub configuration: Ablation,
    pub status: Status,
    pub syntax_ok: bool,
    pub semantic_ok: bool,
    pub final_compliant: bool,
    pub infra_modified: bool,
    pub rag_calls: u64,
    pub tool_calls: u64,
    pub llm_requests: u64,
    pub expected: Expectation,
    pub meets_expectation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub configuration: Ablation,
    pub scenarios: usize,
    pub syntax_pass: usize,
    pub semantic_pass: usize,
    /// Incompatible scenarios whose infrastructure was patched.
    pub infra_modified: usize,
    pub infra_incompatible: usize,
    pub avg_rag_calls: f64,
    pub avg_tool_calls: f64,
}

impl MetricsRow {
    pub fn syntax_cell(&self) -> String {
        format!("{}/{}", self.syntax_pass, self.scenarios)
    }

    /// `---` when nothing parsed, as semantics cannot be judged then.
    pub fn semantic_cell(&self) -> String {
        if self.syntax_pass == 0 {
            "---".into()
        } else {
            format!("{}/{}", self.semantic_pass, self.scenarios)
        }
    }

    pub fn notes(&self) -> String {
        let noun = if self.infra_incompatible == 1 { "file" } else { "files" };
        format!("{}/{} Terraform {noun} modified", self.infra_modified, self.infra_incompatible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub suite: String,
    pub rows: Vec<MetricsRow>,
    pub results: Vec<ScenarioResult>,
}

impl MetricsReport {
    pub fn all_expectations_met(&self) -> bool {
        self.results.iter().all(|r| r.meets_expectation)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Both tables as aligned text.
    pub fn render(&self) -> String {
        let t1: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.model.clone(), r.configuration.to_string(), r.syntax_cell(), r.semantic_cell(), r.notes()])
            .collect();
        let t2: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.configuration.to_string(),
                    format!("{:.2}", r.avg_rag_calls),
                    format!("{:.2}", r.avg_tool_calls),
                ]
            })
            .collect();
        let mut out = table(&["Model", "Configuration", "Syntax", "Semantic", "Notes"], &t1);
        out.push('\n');
        out += &table(&["Model", "Configuration", "Avg RAG calls", "Avg tool calls"], &t2);
        let missed: Vec<&ScenarioResult> = self.results.iter().filter(|r| !r.meets_expectation).collect();
        if !missed.is_empty() {
            out.push('\n');
            for r in missed {
                let _ = writeln!(out, "expectation not met: {} ({}), status {}", r.scenario, r.configuration, r.status);
            }
        }
        out
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                let _ = write!(s, "{c:<w$}  ");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

/// Rows in suite order, one per configuration.
pub fn tabulate(model: &str, configurations: &[Ablation], scenarios: &[Scenario], results: &[ScenarioResult]) -> Vec<MetricsRow> {
    configurations
        .iter()
        .map(|&c| {
            let rs: Vec<&ScenarioResult> = results.iter().filter(|r| r.configuration == c).collect();
            let n = rs.len();
            let incompatible: Vec<&str> =
                scenarios.iter().filter(|s| !s.infra_compatible).map(|s| s.name.as_str()).collect();
            let avg = |f: fn(&ScenarioResult) -> u64| {
                if n == 0 {
                    0.0
                } else {
                    rs.iter().map(|r| f(r)).sum::<u64>() as f64 / n as f64
                }
            };
            MetricsRow {
                model: model.to_string(),
                configuration: c,
                scenarios: n,
                syntax_pass: rs.iter().filter(|r| r.syntax_ok).count(),
                semantic_pass: rs.iter().filter(|r| r.syntax_ok && r.semantic_ok).count(),
                infra_modified: rs.iter().filter(|r| r.infra_modified && incompatible.contains(&r.scenario.as_str())).count(),
                infra_incompatible: incompatible.len(),
                avg_rag_calls: avg(|r| r.rag_calls),
                avg_tool_calls: avg(|r| r.tool_calls),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Where transcripts and final artifacts go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
}

fn load_index(suite: &Suite, base: &Path, embedder: &dyn Embedder) -> Result<Option<KnowledgeIndex>, HarnessError> {
    if let Some(p) = &suite.kb_index {
        return Ok(Some(KnowledgeIndex::load(&base.join(p))?));
    }
    if suite.kb.is_empty() {
        return Ok(None);
    }
    let mut index = KnowledgeIndex::new(embedder);
    for (collection, docs) in &suite.kb {
        let paths: Vec<PathBuf> = docs.iter().map(|d| base.join(d)).collect();
        index.ingest(embedder, &paths, *collection, ChunkParams::default())?;
    }
    Ok(Some(index))
}

fn resolve_oracle(spec: &str, base: &Path) -> String {
    match spec.strip_prefix("file:") {
        Some(p) => format!("file:{}", base.join(p).display()),
        None => spec.to_string(),
    }
}

pub fn run_scenario(
    suite: &Suite,
    base: &Path,
    scenario: &Scenario,
    configuration: Ablation,
    index: Option<&KnowledgeIndex>,
    embedder: &dyn Embedder,
    tools: &ToolRegistry,
    out_dir: Option<&Path>,
) -> Result<(WorkflowOutcome, ScenarioResult), HarnessError> {
    let err_llm = |source| HarnessError::Llm { scenario: scenario.name.clone(), configuration, source };
    let spec = match &suite.backend {
        Some(b) => b.clone(),
        None => BackendSpec::Scripted { script_path: base.join(&scenario.scripts[&configuration]) },
    };
    let scripted = matches!(spec, BackendSpec::Scripted { .. });
    let mut gateway = configure(&spec).map_err(err_llm)?;

    let work = tempfile::tempdir().map_err(|source| HarnessError::Io { path: std::env::temp_dir(), source })?;
    let src = base.join(&scenario.infra);
    let infra = work.path().join(src.file_name().unwrap_or("main.tf".as_ref()));
    std::fs::copy(&src, &infra).map_err(|source| HarnessError::Io { path: src.clone(), source })?;

    let oracle = oracle_from_spec(&resolve_oracle(&suite.oracle, base)).map_err(|e| HarnessError::Oracle(e.message))?;
    let mut rt = Runtime::new(index, embedder, oracle);
    rt.clock = if scripted { Box::new(LogicalClock::default()) as Box<dyn Clock> } else { Box::new(SystemClock) };
    let request = WorkflowRequest {
        policy_prompt: scenario.policy_prompt.clone(),
        infra_path: infra,
        preprocess_mode: PreprocessMode::Synthesize,
        config: WorkflowConfig { ablation: configuration, ..suite.workflow },
    };
    let outcome = run(&request, &mut gateway, tools, rt).map_err(|source| HarnessError::Orchestrator {
        scenario: scenario.name.clone(),
        configuration,
        source,
    })?;
    if let Some(dir) = out_dir {
        let stem = format!("{}.{}", scenario.name, configuration);
        let write = |name: String, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|source| HarnessError::Io { path: p, source })
        };
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        write(format!("{stem}.transcript.jsonl"), &outcome.transcript.to_jsonl())?;
        if let Some(p) = &outcome.policy_source {
            write(format!("{stem}.rego"), p)?;
        }
        write(format!("{stem}.tf"), &outcome.infra_source)?;
    }
    let expected = scenario.expected[&configuration];
    let counters = outcome.transcript.counters();
    let final_compliant = outcome.status == Status::Compliant;
    let actual = Expectation {
        syntax_ok: outcome.syntax_ok,
        semantic_ok: outcome.semantic_ok,
        final_compliant,
        infra_modified: outcome.infra_modified,
    };
    let result = ScenarioResult {
        scenario: scenario.name.clone(),
        configuration,
        status: outcome.status,
        syntax_ok: outcome.syntax_ok,
        semantic_ok: outcome.semantic_ok,
        final_compliant,
        infra_modified: outcome.infra_modified,
        rag_calls: counters.rag_calls,
        tool_calls: counters.tool_calls,
        llm_requests: outcome.transcript.llm_requests() as u64,
        expected,
        meets_expectation: actual == expected,
    };
    Ok((outcome, result))
}

/// Every scenario under every configuration, sequentially, each against a
/// private copy of its infrastructure file.
pub fn run_suite(path: &Path, opts: &EvalOptions) -> Result<MetricsReport, HarnessError> {
    let (suite, base) = Suite::load(path)?;
    let embedder = Lexical;
    let index = load_index(&suite, &base, &embedder)?;
    let tools = ToolRegistry::standard();
    let mut results = Vec::new();
    for &c in &suite.configurations {
        for s in &suite.scenarios {
            let (_, r) = run_scenario(&suite, &base, s, c, index.as_ref(), &embedder, &tools, opts.out_dir.as_deref())?;
            results.push(r);
        }
    }
    let rows = tabulate(&suite.model, &suite.configurations, &suite.scenarios, &results);
    let name = if suite.name.is_empty() { path.display().to_string() } else { suite.name.clone() };
    Ok(MetricsReport { suite: name, rows, results })
}
