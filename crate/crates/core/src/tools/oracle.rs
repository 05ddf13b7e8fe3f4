//! Who decides whether a syntactically valid rule means what was asked.

use std::collections::HashMap;
use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ToolError;
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleDecision {
    pub accepted: bool,
    pub note: Option<String>,
}

pub trait Oracle: Send {
    fn name(&self) -> &str;
    fn review(&mut self, policy_prompt: &str, policy_source: &str) -> Result<OracleDecision, ToolError>;
}

/// sha256 of the policy text with surrounding whitespace removed.
pub fn policy_hash(source: &str) -> String {
    hex::encode(Sha256::digest(source.trim().as_bytes()))
}

/// Accepts everything. For tests and demos.
pub struct AutoAccept;

impl Oracle for AutoAccept {
    fn name(&self) -> &str {
        "auto"
    }

    fn review(&mut self, _: &str, _: &str) -> Result<OracleDecision, ToolError> {
        Ok(OracleDecision { accepted: true, note: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordedVerdict {
    #[serde(alias = "accepted")]
    Accept,
    #[serde(alias = "rejected")]
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedDecision {
    pub verdict: RecordedVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Decisions recorded ahead of time, keyed by [`policy_hash`]. A policy with
/// no entry is rejected: nobody vouched for it.
pub struct FileOracle {
    path: PathBuf,
    decisions: HashMap<String, RecordedDecision>,
}

impl FileOracle {
    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::fatal(format!("cannot read decisions file {}: {e}", path.display())))?;
        let decisions = serde_json::from_str(&text)
            .map_err(|e| ToolError::fatal(format!("decisions file {}: {e}", path.display())))?;
        Ok(FileOracle { path: path.to_path_buf(), decisions })
    }
}

impl Oracle for FileOracle {
    fn name(&self) -> &str {
        "file"
    }

    fn review(&mut self, _: &str, policy_source: &str) -> Result<OracleDecision, ToolError> {
        let hash = policy_hash(policy_source);
        Ok(match self.decisions.get(&hash) {
            Some(d) => OracleDecision { accepted: d.verdict == RecordedVerdict::Accept, note: d.note.clone() },
            None => OracleDecision {
                accepted: false,
                note: Some(format!("no recorded decision for policy {hash} in {}", self.path.display())),
            },
        })
    }
}

/// Asks a person at the terminal.
pub struct Interactive {
    input: Box<dyn BufRead + Send>,
    output: Box<dyn Write + Send>,
}

impl Interactive {
    pub fn from_terminal() -> Result<Self, ToolError> {
        if !std::io::stdin().is_terminal() {
            return Err(ToolError::fatal(
                "the interactive oracle needs a terminal; use --oracle file:PATH or --oracle auto",
            ));
        }
        Ok(Self::with_io(Box::new(std::io::BufReader::new(std::io::stdin())), Box::new(std::io::stderr())))
    }

    pub fn with_io(input: Box<dyn BufRead + Send>, output: Box<dyn Write + Send>) -> Self {
        Interactive { input, output }
    }

    fn line(&mut self) -> Result<String, ToolError> {
        let mut s = String::new();
        let n = self.input.read_line(&mut s).map_err(|e| ToolError::fatal(format!("oracle input: {e}")))?;
        if n == 0 {
            return Err(ToolError::fatal("oracle input closed"));
        }
        Ok(s.trim().to_string())
    }
}

impl Oracle for Interactive {
    fn name(&self) -> &str {
        "interactive"
    }

    fn review(&mut self, policy_prompt: &str, policy_source: &str) -> Result<OracleDecision, ToolError> {
        let io_err = |e: std::io::Error| ToolError::fatal(format!("oracle output: {e}"));
        writeln!(self.output, "\n--- requested policy ---\n{policy_prompt}\n--- generated rule ---\n{policy_source}")
            .map_err(io_err)?;
        let accepted = loop {
            write!(self.output, "accept this rule? [a]ccept/[r]eject: ").map_err(io_err)?;
            self.output.flush().map_err(io_err)?;
            match self.line()?.to_lowercase().as_str() {
                "a" | "accept" | "y" | "yes" => break true,
                "r" | "reject" | "n" | "no" => break false,
                _ => continue,
            }
        };
        write!(self.output, "note (optional): ").map_err(io_err)?;
        self.output.flush().map_err(io_err)?;
        let note = self.line()?;
        Ok(OracleDecision { accepted, note: (!note.is_empty()).then_some(note) })
    }
}

pub type OracleFactory = dyn Fn(Option<&str>) -> Result<Box<dyn Oracle>, ToolError> + Send + Sync;

/// `interactive`, `file` (needs a path) and `auto`.
pub fn oracles() -> Registry<OracleFactory> {
    let mut r: Registry<OracleFactory> = Registry::new("oracle");
    r.register("auto", Box::new(|_: Option<&str>| Ok(Box::new(AutoAccept) as Box<dyn Oracle>)));
    r.register(
        "file",
        Box::new(|arg: Option<&str>| {
            let path = arg.ok_or_else(|| ToolError::fatal("file oracle needs a path: file:PATH"))?;
            Ok(Box::new(FileOracle::load(Path::new(path))?) as Box<dyn Oracle>)
        }),
    );
    r.register("interactive", Box::new(|_: Option<&str>| Ok(Box::new(Interactive::from_terminal()?) as Box<dyn Oracle>)));
    r
}

/// Parses `auto`, `interactive` or `file:PATH`.
pub fn oracle_from_spec(spec: &str) -> Result<Box<dyn Oracle>, ToolError> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let registry = oracles();
    let factory = registry.get(name).map_err(|e| ToolError::fatal(e.to_string()))?;
    factory(arg)
}
