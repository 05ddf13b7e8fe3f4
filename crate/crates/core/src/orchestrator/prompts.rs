//! Prompt templates with named placeholders.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::state::Phase;
use super::OrchestratorError;
use crate::llm::ChatMessage;

pub const PLACEHOLDERS: [&str; 5] = ["policy_prompt", "retrieved_context", "diagnostics", "verdict_traces", "infra_source"];

const BUILTIN: [(&str, &str); 7] = [
    ("system", include_str!("../../templates/system.txt")),
    ("retrieve_opa", include_str!("../../templates/retrieve_opa.txt")),
    ("generate_rules", include_str!("../../templates/generate_rules.txt")),
    ("preprocess", include_str!("../../templates/preprocess.txt")),
    ("validate", include_str!("../../templates/validate.txt")),
    ("retrieve_iac", include_str!("../../templates/retrieve_iac.txt")),
    ("patch_infra", include_str!("../../templates/patch_infra.txt")),
];

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates { texts: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Built-in templates, overridden by any `<name>.txt` present in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, OrchestratorError> {
        let mut t = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    t.texts.insert(name.to_string(), text);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(OrchestratorError::Template(format!("{}: {e}", path.display()))),
            }
        }
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), OrchestratorError> {
        for (name, text) in &self.texts {
            for c in placeholder().captures_iter(text) {
                if !PLACEHOLDERS.contains(&&c[1]) {
                    return Err(OrchestratorError::Template(format!("template {name}: unknown placeholder {{{}}}", &c[1])));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&str, OrchestratorError> {
        self.texts
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| OrchestratorError::Template(format!("no template named {name}")))
    }
}

/// Substitutes every `{name}` in one pass; inserted text is not rescanned.
pub fn fill(template: &str, slots: &BTreeMap<&str, String>) -> Result<String, OrchestratorError> {
    if let Some(c) = placeholder().captures_iter(template).find(|c| !slots.contains_key(&c[1])) {
        return Err(OrchestratorError::MissingPlaceholder(c[1].to_string()));
    }
    Ok(placeholder().replace_all(template, |c: &regex::Captures| slots[&c[1]].clone()).into_owned())
}

/// The system prompt plus the phase's instruction.
pub fn render_prompts(
    templates: &Templates,
    phase: Phase,
    slots: &BTreeMap<&str, String>,
) -> Result<Vec<ChatMessage>, OrchestratorError> {
    let user = match phase {
        Phase::CheckRules | Phase::Done | Phase::Failed => {
            return Err(OrchestratorError::Template(format!("phase {phase} has no prompt")));
        }
        p => fill(templates.get(p.name())?, slots)?,
    };
    Ok(vec![ChatMessage::system(fill(templates.get("system")?, slots)?), ChatMessage::user(user)])
}
