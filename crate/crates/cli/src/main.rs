use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pacloop::diag::render_all;
use pacloop::harness::{run_suite, EvalOptions};
use pacloop::iac::{parse_plan_json, preprocess, PreprocessMode};
use pacloop::llm::{configure, BackendSpec, HttpConfig};
use pacloop::orchestrator::{run, Ablation, Runtime, Templates, WorkflowConfig, WorkflowRequest};
use pacloop::rag::{embedders, ChunkParams, Collection, Embedder, EmbedderSpec, KnowledgeIndex};
use pacloop::rego::{check_syntax, parse_policy};
use pacloop::tools::{oracle_from_spec, policy_hash, policy_validate, ToolRegistry};

#[derive(Parser)]
#[command(name = "pacloop", version, about = "Generate Rego policies from plain language and repair Terraform until it complies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full workflow for one policy prompt.
    Run(RunArgs),
    /// Add documents to a knowledge base index.
    KbIngest(IngestArgs),
    /// Evaluate a policy against a plan or a Terraform file.
    Validate(ValidateArgs),
    /// Run a scenario suite and print the metrics tables.
    Eval(EvalArgs),
    /// Check a policy's syntax.
    Check {
        policy: PathBuf,
    },
    /// Print the hash used to key oracle decision files.
    PolicyHash {
        policy: PathBuf,
    },
}

#[derive(Args)]
struct EmbedderArgs {
    /// `lexical` or `remote`.
    #[arg(long, default_value = "lexical")]
    embedder: String,
    /// Embeddings endpoint for the remote embedder.
    #[arg(long)]
    embed_url: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    /// Name of the environment variable holding the embeddings API key.
    #[arg(long)]
    embed_key_env: Option<String>,
}

impl EmbedderArgs {
    fn build(&self) -> Result<Box<dyn Embedder>> {
        let spec = EmbedderSpec {
            endpoint: self.embed_url.clone(),
            model: self.embed_model.clone(),
            api_key_env: self.embed_key_env.clone(),
            timeout: Some(Duration::from_secs(30)),
        };
        let registry = embedders();
        let factory = registry.get(&self.embedder)?;
        Ok(factory(&spec)?)
    }
}

#[derive(Args)]
struct RunArgs {
    /// The policy in plain language.
    #[arg(long)]
    prompt: String,
    /// Terraform file (or directory, for read-only runs) to check and repair.
    #[arg(long)]
    infra: PathBuf,
    /// synthesize, terraform (external binary) or plan-json.
    #[arg(long, default_value = "synthesize")]
    mode: String,
    #[arg(long)]
    terraform_bin: Option<PathBuf>,
    /// `http` or `scripted`.
    #[arg(long, default_value = "http")]
    backend: String,
    /// Replay file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = "http://localhost:11434")]
    base_url: String,
    #[arg(long, default_value = "qwen3:8b")]
    model: String,
    /// Name of the environment variable holding the model API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long)]
    kb_index: Option<PathBuf>,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// llm-only, rag or agentic.
    #[arg(long, default_value = "agentic")]
    ablation: String,
    #[arg(long, default_value_t = 3)]
    max_iterations: u32,
    #[arg(long, default_value_t = 3)]
    max_rule_retries: u32,
    #[arg(long, default_value_t = 4)]
    phase_turns: u32,
    #[arg(short, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 6000)]
    context_budget: usize,
    /// interactive, file:PATH or auto.
    #[arg(long, default_value = "interactive")]
    oracle: String,
    /// Directory with prompt templates overriding the built-in ones.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value = "pacloop-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, num_args = 1.., required = true)]
    docs: Vec<PathBuf>,
    /// opa or iac.
    #[arg(long)]
    collection: String,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 1000)]
    chunk_size: usize,
    #[arg(long, default_value_t = 200)]
    overlap: usize,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Execution plan JSON.
    #[arg(long, conflicts_with = "infra", required_unless_present = "infra")]
    plan: Option<PathBuf>,
    /// Terraform file or directory, turned into a plan first.
    #[arg(long)]
    infra: Option<PathBuf>,
    #[arg(long, default_value = "synthesize")]
    mode: String,
}

#[derive(Args)]
struct EvalArgs {
    suite: PathBuf,
    /// Where report.json, report.txt and transcripts go.
    #[arg(long, default_value = "pacloop-eval")]
    out_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let ablation: Ablation = a.ablation.parse().map_err(anyhow::Error::msg)?;
    let mode: PreprocessMode = a.mode.parse()?;
    if !a.infra.exists() {
        bail!("infrastructure path {} does not exist", a.infra.display());
    }
    let spec = match a.backend.as_str() {
        "scripted" => BackendSpec::Scripted {
            script_path: a.script.clone().context("--backend scripted needs --script")?,
        },
        "http" => BackendSpec::Http(HttpConfig {
            timeout_s: a.timeout,
            api_key_env: a.api_key_env.clone(),
            ..HttpConfig::new(&a.base_url, &a.model)
        }),
        other => bail!("unknown backend `{other}` (expected http or scripted)"),
    };
    let mut gateway = configure(&spec)?;
    let embedder = a.embedder.build()?;
    let index = match &a.kb_index {
        Some(p) => Some(KnowledgeIndex::load(p)?),
        None if ablation == Ablation::LlmOnly => None,
        None => bail!("--ablation {ablation} needs --kb-index"),
    };
    let oracle = oracle_from_spec(&a.oracle).map_err(|e| anyhow::anyhow!(e.message))?;
    let mut rt = Runtime::new(index.as_ref(), embedder.as_ref(), oracle);
    if let Some(dir) = &a.templates {
        rt.templates = Templates::with_overrides(dir)?;
    }
    rt.terraform_bin = a.terraform_bin.clone();
    let request = WorkflowRequest {
        policy_prompt: a.prompt.clone(),
        infra_path: a.infra.clone(),
        preprocess_mode: mode,
        config: WorkflowConfig {
            max_iterations: a.max_iterations,
            max_rule_retries: a.max_rule_retries,
            phase_turns: a.phase_turns,
            ablation,
            k: a.k,
            context_budget: a.context_budget,
        },
    };
    let outcome = run(&request, &mut gateway, &ToolRegistry::standard(), rt)?;

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let transcript = a.out_dir.join("transcript.jsonl");
    write(&transcript, &outcome.transcript.to_jsonl())?;
    if let Some(p) = &outcome.policy_source {
        write(&a.out_dir.join("policy.rego"), p)?;
    }
    if a.infra.is_file() {
        write(&a.out_dir.join("final.tf"), &outcome.infra_source)?;
    }
    let c = outcome.transcript.counters();
    println!("status: {}", outcome.status);
    if let Some(d) = &outcome.detail {
        println!("detail: {d}");
    }
    println!(
        "rule attempts: {}, repair iterations: {}, rag calls: {}, tool calls: {}",
        outcome.rule_attempts, outcome.repair_iterations, c.rag_calls, c.tool_calls
    );
    if let Some(v) = &outcome.final_verdict {
        for m in &v.deny_messages {
            println!("violation: {m}");
        }
    }
    println!("transcript: {}", transcript.display());
    Ok(outcome.status.exit_code() as u8)
}

fn cmd_ingest(a: IngestArgs) -> Result<u8> {
    let collection: Collection = a.collection.parse()?;
    for d in &a.docs {
        if !d.exists() {
            bail!("no such document path: {}", d.display());
        }
    }
    let embedder = a.embedder.build()?;
    let mut index = if a.index.exists() { KnowledgeIndex::load(&a.index)? } else { KnowledgeIndex::new(embedder.as_ref()) };
    let params = ChunkParams { size: a.chunk_size, overlap: a.overlap };
    let stats = index.ingest(embedder.as_ref(), &a.docs, collection, params)?;
    index.save(&a.index)?;
    let dim = index.dim().unwrap_or(0);
    println!(
        "{} files, {} new chunks, {} unchanged, {} replaced, {} chunks in {} ({} total), dim {dim}",
        stats.files,
        stats.added,
        stats.unchanged,
        stats.replaced,
        index.len(collection),
        collection,
        index.chunks().count()
    );
    Ok(0)
}

fn cmd_validate(a: ValidateArgs) -> Result<u8> {
    let source = read(&a.policy)?;
    let policy = match parse_policy(&source) {
        Ok(p) => p,
        Err(diags) => {
            eprint!("{}", render_all(&a.policy.display().to_string(), &diags));
            return Ok(1);
        }
    };
    let plan = match (&a.plan, &a.infra) {
        (Some(p), _) => parse_plan_json(&read(p)?).with_context(|| format!("plan {}", p.display()))?,
        (None, Some(i)) => {
            let mode: PreprocessMode = a.mode.parse()?;
            match preprocess(i, mode) {
                Ok(plan) => plan,
                Err(e) => {
                    let diags = e.diagnostics();
                    if diags.is_empty() {
                        eprintln!("error: {e}");
                    } else {
                        eprint!("{}", render_all(&i.display().to_string(), diags));
                    }
                    return Ok(1);
                }
            }
        }
        (None, None) => bail!("either --plan or --infra is required"),
    };
    let verdict = policy_validate(&policy, &plan).map_err(|e| anyhow::anyhow!(e.message))?;
    println!("{}", verdict.feedback());
    Ok(if verdict.compliant { 0 } else { 2 })
}

fn cmd_eval(a: EvalArgs) -> Result<u8> {
    let transcripts = a.out_dir.join("transcripts");
    let report = run_suite(&a.suite, &EvalOptions { out_dir: Some(transcripts) })?;
    let text = report.render();
    write(&a.out_dir.join("report.json"), &report.to_json())?;
    write(&a.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn cmd_check(policy: &Path) -> Result<u8> {
    let diags = check_syntax(&read(policy)?);
    if diags.is_empty() {
        println!("{}: ok", policy.display());
        Ok(0)
    } else {
        eprint!("{}", render_all(&policy.display().to_string(), &diags));
        Ok(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::KbIngest(a) => cmd_ingest(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Check { policy } => cmd_check(&policy),
        Command::PolicyHash { policy } => read(&policy).map(|s| {
            println!("{}", policy_hash(&s));
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
