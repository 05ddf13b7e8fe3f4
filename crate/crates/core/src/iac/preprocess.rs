//! Turning an infrastructure path into a plan, by one of several strategies.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use super::{parse_hcl_mini, parse_plan_json, synthesize_plan, IacError, InfraFile, PlanDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessMode {
    Synthesize,
    ExternalTerraform,
    PlanJson,
}

impl PreprocessMode {
    pub const ALL: [PreprocessMode; 3] =
        [PreprocessMode::Synthesize, PreprocessMode::ExternalTerraform, PreprocessMode::PlanJson];

    pub fn name(self) -> &'static str {
        match self {
            PreprocessMode::Synthesize => "synthesize",
            PreprocessMode::ExternalTerraform => "external-terraform",
            PreprocessMode::PlanJson => "plan-json",
        }
    }

    /// The strategy for this mode. `terraform_bin` only matters for the
    /// external mode.
    pub fn preprocessor(self, terraform_bin: Option<&Path>) -> Box<dyn Preprocessor> {
        match self {
            PreprocessMode::Synthesize => Box::new(Synthesize),
            PreprocessMode::PlanJson => Box::new(PlanJson),
            PreprocessMode::ExternalTerraform => Box::new(ExternalTerraform {
                binary: terraform_bin.map_or_else(|| PathBuf::from("terraform"), Path::to_path_buf),
            }),
        }
    }
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreprocessMode {
    type Err = IacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "terraform" && *m == PreprocessMode::ExternalTerraform))
            .ok_or_else(|| IacError::Input(format!("unknown preprocess mode `{s}` (synthesize, external-terraform, plan-json)")))
    }
}

pub trait Preprocessor: Send + Sync {
    fn mode(&self) -> PreprocessMode;
    fn plan(&self, path: &Path) -> Result<PlanDocument, IacError>;
}

fn read(path: &Path) -> Result<String, IacError> {
    std::fs::read_to_string(path).map_err(|e| IacError::io(path, e))
}

/// Parses one `.tf` file, or every `.tf` file of a directory in name order.
pub fn load_infra(path: &Path) -> Result<InfraFile, IacError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| IacError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tf"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut merged = InfraFile { source: String::new(), blocks: Vec::new() };
    for f in files {
        let src = read(&f)?;
        let parsed = parse_hcl_mini(&src).map_err(|diagnostics| IacError::Syntax {
            file: f.display().to_string(),
            diagnostics,
        })?;
        merged.source.push_str(&src);
        merged.blocks.extend(parsed.blocks);
    }
    Ok(merged)
}

pub struct Synthesize;

impl Preprocessor for Synthesize {
    fn mode(&self) -> PreprocessMode {
        PreprocessMode::Synthesize
    }

    fn plan(&self, path: &Path) -> Result<PlanDocument, IacError> {
        synthesize_plan(&load_infra(path)?)
    }
}

pub struct PlanJson;

impl Preprocessor for PlanJson {
    fn mode(&self) -> PreprocessMode {
        PreprocessMode::PlanJson
    }

    fn plan(&self, path: &Path) -> Result<PlanDocument, IacError> {
        parse_plan_json(&read(path)?)
    }
}

pub struct ExternalTerraform {
    pub binary: PathBuf,
}

/// Resolves a program name against PATH; paths with a separator are taken as is.
pub fn find_program(program: &Path) -> Option<PathBuf> {
    if program.components().count() > 1 {
        return program.is_file().then(|| program.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join(program)).find(|p| p.is_file())
}

fn dir_lock(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let key = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    map.entry(key).or_default().clone()
}

impl ExternalTerraform {
    fn run(&self, exe: &Path, dir: &Path, args: &[&str]) -> Result<Vec<u8>, IacError> {
        let out = Command::new(exe)
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| IacError::ExternalToolFailed { tool: exe.display().to_string(), detail: e.to_string() })?;
        if !out.status.success() {
            return Err(IacError::ExternalToolFailed {
                tool: format!("terraform {}", args[0]),
                detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }
}

impl Preprocessor for ExternalTerraform {
    fn mode(&self) -> PreprocessMode {
        PreprocessMode::ExternalTerraform
    }

    fn plan(&self, path: &Path) -> Result<PlanDocument, IacError> {
        let exe = find_program(&self.binary)
            .ok_or_else(|| IacError::ExternalToolUnavailable(self.binary.display().to_string()))?;
        let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
        let lock = dir_lock(dir);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let planfile = tempfile::Builder::new()
            .prefix(".pacloop-")
            .suffix(".tfplan")
            .tempfile_in(dir)
            .map_err(|e| IacError::io(dir, e))?;
        let planarg = planfile.path().display().to_string();
        self.run(&exe, dir, &["init", "-input=false", "-no-color"])?;
        self.run(&exe, dir, &["plan", "-input=false", "-no-color", &format!("-out={planarg}")])?;
        let json = self.run(&exe, dir, &["show", "-json", &planarg])?;
        parse_plan_json(&String::from_utf8_lossy(&json))
    }
}

pub fn preprocess(path: &Path, mode: PreprocessMode) -> Result<PlanDocument, IacError> {
    mode.preprocessor(None).plan(path)
}

/// Where the normalized plan for `input` is cached.
pub fn cache_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(".pacloop.plan.json")
    } else {
        let mut name = input.file_name().unwrap_or_default().to_os_string();
        name.push(".plan.json");
        input.with_file_name(name)
    }
}

pub fn write_cache(input: &Path, plan: &PlanDocument) -> Result<PathBuf, IacError> {
    let target = cache_path(input);
    std::fs::write(&target, plan.to_json_pretty()).map_err(|e| IacError::io(&target, e))?;
    Ok(target)
}
