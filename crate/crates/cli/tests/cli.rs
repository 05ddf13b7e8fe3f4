use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PROMPT: &str = "Allow only virtual machines with 4 cores in Terraform.";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn pacloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacloop")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(index: &Path) -> Output {
    let opa = fixtures().join("kb/opa");
    let iac = fixtures().join("kb/iac");
    let first = pacloop(&["kb-ingest", "--docs", s(&opa), "--collection", "opa", "--index", s(index)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    pacloop(&["kb-ingest", "--docs", s(&iac), "--collection", "iac", "--index", s(index)])
}

fn copy_infra(dir: &Path, name: &str) -> PathBuf {
    let p = dir.join("main.tf");
    std::fs::copy(fixtures().join(format!("infra/{name}.tf")), &p).unwrap();
    p
}

#[test]
fn golden_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("kb.jsonl");
    assert_eq!(code(&ingest(&index)), 0);
    let infra = copy_infra(dir.path(), "vm_4core");
    let out_dir = dir.path().join("out");
    let script = fixtures().join("scripts/golden_compliant.json");
    let oracle = format!("file:{}", fixtures().join("decisions.json").display());
    let o = pacloop(&[
        "run", "--prompt", PROMPT, "--infra", s(&infra), "--backend", "scripted", "--script", s(&script),
        "--kb-index", s(&index), "--oracle", &oracle, "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("status: compliant"));
    assert!(out_dir.join("policy.rego").exists());
    let transcript = std::fs::read_to_string(out_dir.join("transcript.jsonl")).unwrap();
    assert!(transcript.lines().last().unwrap().contains("final_outcome"));
}

#[test]
fn llm_only_broken_rule_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let infra = copy_infra(dir.path(), "vm_4core");
    let script = fixtures().join("scripts/llm_only_broken.json");
    let oracle = format!("file:{}", fixtures().join("decisions.json").display());
    let o = pacloop(&[
        "run", "--prompt", PROMPT, "--infra", s(&infra), "--backend", "scripted", "--script", s(&script),
        "--ablation", "llm-only", "--oracle", &oracle, "--out-dir", s(&dir.path().join("out")),
    ]);
    assert_eq!(code(&o), 3, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("status: rule-generation-failed"));
}

#[test]
fn missing_infra_is_a_usage_error() {
    let o = pacloop(&["run", "--prompt", PROMPT]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--infra"));
}

#[test]
fn agentic_run_without_index_fails() {
    let dir = tempfile::tempdir().unwrap();
    let infra = copy_infra(dir.path(), "vm_4core");
    let script = fixtures().join("scripts/golden_compliant.json");
    let o = pacloop(&["run", "--prompt", PROMPT, "--infra", s(&infra), "--backend", "scripted", "--script", s(&script)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("needs --kb-index"), "{}", stderr(&o));
}

#[test]
fn validate_exit_codes() {
    let policy = fixtures().join("policies/cores_exact.rego");
    let ok = pacloop(&["validate", "--policy", s(&policy), "--infra", s(&fixtures().join("infra/vm_4core.tf"))]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let bad = pacloop(&["validate", "--policy", s(&policy), "--infra", s(&fixtures().join("infra/vm_2core.tf"))]);
    assert_eq!(code(&bad), 2);
    assert!(stdout(&bad).contains("VM must have exactly 4 cores"));

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.rego");
    std::fs::write(&broken, "package terraform\n\ndeny[msg] {\n  msg := \"x\"\n}\n").unwrap();
    let o = pacloop(&["validate", "--policy", s(&broken), "--infra", s(&fixtures().join("infra/vm_4core.tf"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("broken.rego:"), "{}", stderr(&o));
}

#[test]
fn reingest_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("kb.jsonl");
    ingest(&index);
    let again = ingest(&index);
    assert_eq!(code(&again), 0);
    assert!(stdout(&again).contains(" 0 new chunks"), "{}", stdout(&again));
    let missing = pacloop(&["kb-ingest", "--docs", "/no/such/dir", "--collection", "opa", "--index", s(&index)]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let o = pacloop(&["eval", s(&fixtures().join("suite/suite.json")), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("agentic"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(out.join("report.txt").exists());
    assert!(out.join("transcripts").read_dir().unwrap().count() >= 15);
}

#[test]
fn check_and_hash() {
    let policy = fixtures().join("policies/cores_exact.rego");
    let o = pacloop(&["check", s(&policy)]);
    assert_eq!(code(&o), 0);
    let h1 = stdout(&pacloop(&["policy-hash", s(&policy)]));
    let h2 = stdout(&pacloop(&["policy-hash", s(&policy)]));
    assert_eq!(h1, h2);
    assert_eq!(h1.trim().len(), 64);
}
