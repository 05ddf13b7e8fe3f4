//! One line per acceptance criterion. Runs without the libtest harness so
//! the lines always show up, and exits non-zero if any criterion fails.

mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pacloop::harness::{run_suite, EvalOptions, MetricsReport, Suite};
use pacloop::iac::{find_program, parse_hcl_mini, parse_plan_json, preprocess, synthesize_plan, PreprocessMode};
use pacloop::llm::{configure, BackendSpec};
use pacloop::orchestrator::{run, Ablation, LogicalClock, Runtime, Status, WorkflowConfig, WorkflowOutcome, WorkflowRequest};
use pacloop::rag::{ChunkParams, Collection, KnowledgeIndex, Lexical};
use pacloop::rego::{evaluate, parse_policy, print_policy};
use pacloop::tools::{oracle_from_spec, policy_validate, ToolRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use support::brute::brute_force_deny;
use support::gen::{random_document, random_policy};
use support::retrieval::{cosine, reference_vector, sentence, write_corpus};
use support::{fixture_text, fixtures};

const GOLDEN_PROMPT: &str = "Allow only virtual machines with 4 cores in Terraform.";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(elapsed: Duration, limit_ms: u128) -> Result<String, String> {
    let ms = elapsed.as_millis();
    check(ms < limit_ms, format!("took {ms} ms, limit {limit_ms} ms"))?;
    Ok(format!("{ms} ms < {limit_ms} ms"))
}

fn scripted_run(script: &str, infra_fixture: &str) -> (WorkflowOutcome, tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let infra = dir.path().join("main.tf");
    std::fs::write(&infra, fixture_text(&format!("infra/{infra_fixture}.tf"))).unwrap();
    let mut idx = KnowledgeIndex::new(&Lexical);
    idx.ingest(&Lexical, &[fixtures().join("kb/opa")], Collection::Opa, ChunkParams::default()).unwrap();
    idx.ingest(&Lexical, &[fixtures().join("kb/iac")], Collection::Iac, ChunkParams::default()).unwrap();
    let mut gateway = configure(&BackendSpec::Scripted { script_path: fixtures().join("scripts").join(script) }).unwrap();
    let oracle = oracle_from_spec(&format!("file:{}", fixtures().join("decisions.json").display())).unwrap();
    let mut rt = Runtime::new(Some(&idx), &Lexical, oracle);
    rt.clock = Box::new(LogicalClock::default());
    let req = WorkflowRequest {
        policy_prompt: GOLDEN_PROMPT.into(),
        infra_path: infra.clone(),
        preprocess_mode: PreprocessMode::Synthesize,
        config: WorkflowConfig::default(),
    };
    let out = run(&req, &mut gateway, &ToolRegistry::standard(), rt).unwrap();
    (out, dir, infra)
}

fn patches(out: &WorkflowOutcome) -> usize {
    out.transcript.tool_names().iter().filter(|t| **t == "patch_infra").count()
}

fn golden_end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let (out, _dir, infra) = scripted_run("golden_compliant.json", "vm_4core");
    let elapsed = start.elapsed();
    check(out.status == Status::Compliant, format!("status {} ({:?})", out.status, out.detail))?;
    let want = parse_policy(&fixture_text("policies/cores_exact.rego")).unwrap();
    let got = parse_policy(out.policy_source.as_deref().unwrap_or_default()).map_err(|d| format!("{d:?}"))?;
    check(got.same_structure(&want), "policy differs from the reference rule")?;
    let plan = preprocess(&infra, PreprocessMode::Synthesize).map_err(|e| e.to_string())?;
    check(policy_validate(&got, &plan).map_err(|e| e.message)?.compliant, "re-validation not compliant")?;
    check(patches(&out) == 0 && !out.infra_modified, "infrastructure was modified")?;
    check(std::fs::read_to_string(&infra).unwrap() == fixture_text("infra/vm_4core.tf"), "file content changed")?;
    Ok(format!("compliant, reference rule, 0 modifications, {}", within(elapsed, 2000)?))
}

fn repair_loop() -> Result<String, String> {
    let start = Instant::now();
    let (fix, _d1, infra) = scripted_run("golden_repair.json", "vm_2core");
    let (nonfix, _d2, _) = scripted_run("golden_nonfix.json", "vm_2core");
    let elapsed = start.elapsed();
    check(fix.status == Status::Compliant, format!("fix run ended {}", fix.status))?;
    check(fix.repair_iterations == 1 && patches(&fix) == 1, format!("fix took {} iterations", fix.repair_iterations))?;
    let plan = preprocess(&infra, PreprocessMode::Synthesize).map_err(|e| e.to_string())?;
    let policy = parse_policy(fix.policy_source.as_deref().unwrap_or_default()).map_err(|d| format!("{d:?}"))?;
    check(policy_validate(&policy, &plan).map_err(|e| e.message)?.compliant, "patched file not compliant")?;
    check(nonfix.status == Status::NonCompliantGaveUp, format!("non-fix run ended {}", nonfix.status))?;
    check(nonfix.repair_iterations == 3 && patches(&nonfix) == 3, format!("non-fix ran {} iterations", nonfix.repair_iterations))?;
    Ok(format!("fix: compliant after 1 iteration; non-fix: gave up after 3; {}", within(elapsed, 2000)?))
}

fn evaluator_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let cases = 300;
    let mut nonempty = 0;
    for seed in 1_000_000..1_000_000 + cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = random_policy(&mut rng, true);
        let doc = random_document(&mut rng);
        let got = evaluate(&policy, &doc).map_err(|e| format!("seed {seed}: {e}"))?;
        let want = brute_force_deny(&policy, &doc);
        check(got == want, format!("seed {seed}: {got:?} != {want:?}\n{}", print_policy(&policy)))?;
        nonempty += usize::from(!got.is_empty());
    }
    Ok(format!("{cases} pairs equal ({nonempty} non-empty), {}", within(start.elapsed(), 30_000)?))
}

fn corpus() -> (Vec<PathBuf>, Vec<PathBuf>) {
    let list = |dir: &str, ext: &str| {
        let mut v: Vec<PathBuf> = std::fs::read_dir(fixtures().join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == ext))
            .collect();
        v.sort();
        v
    };
    (list("corpus", "rego"), list("plans", "json"))
}

fn opa_deny(opa: &Path, policy: &Path, plan: &Path) -> Result<BTreeSet<String>, String> {
    let out = Command::new(opa)
        .args(["eval", "--format", "json", "--data"])
        .arg(policy)
        .arg("--input")
        .arg(plan)
        .arg("data.terraform.deny")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())?;
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let value = &v["result"][0]["expressions"][0]["value"];
    Ok(match value {
        Value::Array(a) => a.iter().filter_map(|m| m.as_str().map(String::from)).collect(),
        Value::Object(o) => o.keys().cloned().collect(),
        _ => BTreeSet::new(),
    })
}

fn differential() -> Verdict {
    let (policies, plans) = corpus();
    if policies.len() < 10 || plans.len() < 5 {
        return Verdict::Fail(format!("corpus has {} policies x {} plans", policies.len(), plans.len()));
    }
    let mut ours = Vec::new();
    for p in &policies {
        let doc = match parse_policy(&std::fs::read_to_string(p).unwrap()) {
            Ok(d) => d,
            Err(d) => return Verdict::Fail(format!("{} does not parse: {d:?}", p.display())),
        };
        for plan in &plans {
            let input = parse_plan_json(&std::fs::read_to_string(plan).unwrap()).unwrap();
            ours.push((p, plan, evaluate(&doc, input.root()).unwrap()));
        }
    }
    let Some(opa) = find_program(Path::new("opa")) else {
        return Verdict::Skip(format!("no opa executable on PATH; corpus of {} x {} evaluated locally only", policies.len(), plans.len()));
    };
    for (p, plan, want) in &ours {
        match opa_deny(&opa, p, plan) {
            Ok(got) if &got == want => {}
            Ok(got) => return Verdict::Fail(format!("{} on {}: opa {got:?}, ours {want:?}", p.display(), plan.display())),
            Err(e) => return Verdict::Fail(format!("opa failed on {}: {e}", p.display())),
        }
    }
    Verdict::Pass(format!("{} policies x {} plans identical to opa eval", policies.len(), plans.len()))
}

fn plan_shape() -> Result<String, String> {
    let infra = parse_hcl_mini(&fixture_text("infra/vm_4core.tf")).map_err(|d| format!("{d:?}"))?;
    let plan = synthesize_plan(&infra).map_err(|e| e.to_string())?;
    let r = &plan.resources()[0];
    check(r.address == "proxmox_virtual_environment_vm.cloned_vm", r.address.clone())?;
    let v = &r.values;
    let want = [
        ("cpu", json!([{"cores": 4}])),
        ("memory", json!([{"dedicated": 8192}])),
        ("disk", json!([{"interface": "scsi0", "datastore_id": "Storage", "size": 150}])),
        ("network_device", json!([{"bridge": "intVM", "model": "virtio"}])),
        ("tags", json!(["PaC"])),
        ("description", json!("Cloned for PaC test")),
    ];
    for (k, w) in &want {
        check(&v[*k] == w, format!("values.{k} = {}, want {w}", v[*k]))?;
    }
    let root = plan.root();
    check(
        root["planned_values"]["root_module"]["resources"][0]["values"]["cpu"][0]["cores"] == json!(4),
        "plan root does not expose the values",
    )?;
    Ok("cpu/memory/disk/network_device are arrays of objects with the excerpt values".into())
}

fn retrieval() -> Result<String, String> {
    let corpora = 150;
    for seed in 5_000..5_000 + corpora {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpus(&mut rng, dir.path());
        let params = ChunkParams { size: rng.random_range(20..80), overlap: rng.random_range(0..15) };
        let mut idx = KnowledgeIndex::new(&Lexical);
        idx.ingest(&Lexical, &files, Collection::Opa, params).map_err(|e| e.to_string())?;
        let q = sentence(&mut rng);
        let k = rng.random_range(1..6);
        let hits = idx.query(&Lexical, &q, Collection::Opa, k).map_err(|e| e.to_string())?;
        let qv = reference_vector(&q);
        let mut expected: Vec<(f64, String)> =
            idx.chunks().map(|c| (cosine(&qv, &reference_vector(&c.body)), c.chunk_id.clone())).collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        check(hits.len() == k.min(expected.len()), format!("seed {seed}: {} hits", hits.len()))?;
        for (h, (score, id)) in hits.iter().zip(&expected) {
            check((h.score - score).abs() < 1e-9, format!("seed {seed}: score {} vs {score}", h.score))?;
            if &h.chunk.chunk_id != id {
                let theirs = expected.iter().find(|e| e.1 == h.chunk.chunk_id).map_or(f64::NAN, |e| e.0);
                check((theirs - score).abs() < 1e-12, format!("seed {seed}: rank mismatch"))?;
            }
        }
        let path = dir.path().join("index.jsonl");
        idx.save(&path).map_err(|e| e.to_string())?;
        let loaded = KnowledgeIndex::load(&path).map_err(|e| e.to_string())?;
        let again = loaded.query(&Lexical, &q, Collection::Opa, k).map_err(|e| e.to_string())?;
        check(again == hits, format!("seed {seed}: results changed after reload"))?;
    }
    Ok(format!("top-k equals brute-force cosine on {corpora} corpora; reload preserves results"))
}

fn read_transcripts(dir: &Path, configuration: Ablation) -> Vec<(String, Vec<Value>)> {
    let suffix = format!(".{configuration}.transcript.jsonl");
    let mut out: Vec<(String, Vec<Value>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            let scenario = name.strip_suffix(&suffix)?.to_string();
            let events = std::fs::read_to_string(&p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
            Some((scenario, events))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn count_tool_events(events: &[Value]) -> (u64, u64) {
    let calls: Vec<&Value> = events.iter().filter(|e| e["event"] == "tool_call").collect();
    (calls.iter().filter(|e| e["tool"] == "kb_search").count() as u64, calls.len() as u64)
}

fn suite_run(dir: &Path) -> Result<MetricsReport, String> {
    run_suite(&fixtures().join("suite/suite.json"), &EvalOptions { out_dir: Some(dir.to_path_buf()) }).map_err(|e| e.to_string())
}

fn metrics(first: &MetricsReport, dir: &Path, second: &MetricsReport) -> Result<String, String> {
    check(first.to_json() == second.to_json(), "report.json differs between runs")?;
    check(first.render() == second.render(), "text report differs between runs")?;
    let (suite, _) = Suite::load(&fixtures().join("suite/suite.json")).map_err(|e| e.to_string())?;
    for row in &first.rows {
        let c = row.configuration;
        let exp = |f: fn(&pacloop::harness::Expectation) -> bool| suite.scenarios.iter().filter(|s| f(&s.expected[&c])).count();
        check(row.scenarios == suite.scenarios.len(), format!("{c}: {} scenarios", row.scenarios))?;
        check(row.syntax_pass == exp(|e| e.syntax_ok), format!("{c}: syntax {}", row.syntax_cell()))?;
        check(row.semantic_pass == exp(|e| e.semantic_ok), format!("{c}: semantic {}", row.semantic_cell()))?;
        check(row.syntax_pass >= row.semantic_pass, format!("{c}: semantic exceeds syntax"))?;
        let transcripts = read_transcripts(dir, c);
        check(transcripts.len() == row.scenarios, format!("{c}: {} transcripts", transcripts.len()))?;
        let (mut rag, mut tools) = (0u64, 0u64);
        for (_, events) in &transcripts {
            let (r, t) = count_tool_events(events);
            rag += r;
            tools += t;
        }
        let n = transcripts.len() as f64;
        check(row.avg_rag_calls == rag as f64 / n, format!("{c}: avg rag {} vs {}", row.avg_rag_calls, rag as f64 / n))?;
        check(row.avg_tool_calls == tools as f64 / n, format!("{c}: avg tools {} vs {}", row.avg_tool_calls, tools as f64 / n))?;
    }
    check(first.all_expectations_met(), "some scenario missed its expectation")?;
    let cells: Vec<String> = first
        .rows
        .iter()
        .map(|r| format!("{} {} {} rag {:.2} tools {:.2}", r.configuration, r.syntax_cell(), r.semantic_cell(), r.avg_rag_calls, r.avg_tool_calls))
        .collect();
    Ok(format!("{}; byte-identical reruns", cells.join(", ")))
}

fn ablation_gating(dir: &Path) -> Result<String, String> {
    let llm_only = read_transcripts(dir, Ablation::LlmOnly);
    let rag = read_transcripts(dir, Ablation::Rag);
    check(!llm_only.is_empty() && !rag.is_empty(), "no transcripts")?;
    for (s, events) in &llm_only {
        let tool_events = events.iter().filter(|e| e["event"] == "tool_call" || e["event"] == "tool_result").count();
        check(tool_events == 0, format!("llm-only {s}: {tool_events} tool events"))?;
    }
    for (s, events) in &rag {
        let calls: Vec<&Value> = events.iter().filter(|e| e["event"] == "tool_call" || e["event"] == "tool_result").collect();
        check(!calls.is_empty(), format!("rag {s}: no retrieval"))?;
        check(calls.iter().all(|e| e["tool"] == "kb_search"), format!("rag {s}: non-retrieval tool event"))?;
    }
    Ok(format!("{} llm-only transcripts without tool events; {} rag transcripts with kb_search only", llm_only.len(), rag.len()))
}

fn guarded(f: impl FnOnce() -> Result<String, String>) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => Verdict::Pass(s),
        Ok(Err(s)) => Verdict::Fail(s),
        Err(p) => Verdict::Fail(
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default(),
        ),
    }
}

fn main() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let reports = catch_unwind(|| (suite_run(a.path()), suite_run(b.path())));
    let suite_verdict = |f: &dyn Fn(&MetricsReport, &MetricsReport) -> Result<String, String>| match &reports {
        Ok((Ok(x), Ok(y))) => guarded(|| f(x, y)),
        Ok((Err(e), _)) | Ok((_, Err(e))) => Verdict::Fail(format!("suite run failed: {e}")),
        Err(_) => Verdict::Fail("suite run panicked".into()),
    };

    let results: Vec<(&str, Verdict)> = vec![
        ("golden end-to-end", guarded(golden_end_to_end)),
        ("repair loop", guarded(repair_loop)),
        ("evaluator oracle equivalence", guarded(evaluator_equivalence)),
        ("differential check against opa", differential()),
        ("plan-shape fidelity", guarded(plan_shape)),
        ("retrieval correctness", guarded(retrieval)),
        ("metrics soundness", suite_verdict(&|x, y| metrics(x, a.path(), y))),
        ("ablation gating", suite_verdict(&|_, _| ablation_gating(a.path()))),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {tag} ({detail})", i + 1);
    }
    if failed == 0 {
        println!("acceptance: all criteria passed or skipped");
    } else {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
}
