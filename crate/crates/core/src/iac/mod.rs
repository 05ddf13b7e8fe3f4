//! Terraform plans, the mini-HCL subset, and infrastructure patching.

mod hcl;
mod plan;
mod preprocess;

use std::path::PathBuf;

use thiserror::Error;

use crate::diag::{render_all, Diagnostic};

pub use hcl::{parse_hcl_mini, print_hcl, AttrValue, BlockBody, BodyItem, InfraFile, NestedBlock, ResourceBlock};
pub use plan::{parse_plan_json, plan_from_value, synthesize_plan, PlanDocument, ResourceEntry};
pub use preprocess::{
    load_infra,
    cache_path, find_program, preprocess, write_cache, ExternalTerraform, PlanJson, PreprocessMode, Preprocessor,
    Synthesize,
};

#[derive(Debug, Error)]
pub enum IacError {
    #[error("plan is not valid JSON: {0}")]
    NotJson(String),
    #[error("missing planned_values")]
    MissingPlannedValues,
    #[error("missing root_module")]
    MissingRootModule,
    #[error("resource #{index}: {reason}")]
    InvalidResource { index: usize, reason: String },
    #[error("{}", render_all(.file, .diagnostics))]
    Syntax { file: String, diagnostics: Vec<Diagnostic> },
    #[error("duplicate resource address: {0}")]
    DuplicateAddress(String),
    #[error("{address}: `{name}` is both an attribute and a nested block")]
    Conflict { address: String, name: String },
    #[error("resource removed: {}", .0.join(", "))]
    ResourceRemoved(Vec<String>),
    #[error("external tool unavailable: {0}")]
    ExternalToolUnavailable(String),
    #[error("{tool} failed: {detail}")]
    ExternalToolFailed { tool: String, detail: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
}

impl IacError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IacError::Io { path: path.into(), source }
    }

    /// Diagnostics when the error came from parsing, for feeding back to a model.
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            IacError::Syntax { diagnostics, .. } => diagnostics,
            _ => &[],
        }
    }
}

/// Whole-file replacement of `original` by `patched_source`. The result must
/// parse, synthesize, and keep every resource address of the original.
pub fn apply_patch(original: &InfraFile, patched_source: &str) -> Result<InfraFile, IacError> {
    let patched = parse_hcl_mini(patched_source).map_err(|diagnostics| IacError::Syntax {
        file: "patch".into(),
        diagnostics,
    })?;
    let kept = patched.addresses();
    let removed: Vec<String> = original.addresses().into_iter().filter(|a| !kept.contains(a)).collect();
    if !removed.is_empty() {
        return Err(IacError::ResourceRemoved(removed));
    }
    synthesize_plan(&patched)?;
    Ok(patched)
}
