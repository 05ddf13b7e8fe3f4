//! The workflow as a pure transition function.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    RetrieveOpa,
    GenerateRules,
    CheckRules,
    Preprocess,
    Validate,
    RetrieveIac,
    PatchInfra,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::RetrieveOpa => "retrieve_opa",
            Phase::GenerateRules => "generate_rules",
            Phase::CheckRules => "check_rules",
            Phase::Preprocess => "preprocess",
            Phase::Validate => "validate",
            Phase::RetrieveIac => "retrieve_iac",
            Phase::PatchInfra => "patch_infra",
            Phase::Done => "done",
            Phase::Failed => "failed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Compliant,
    NonCompliantGaveUp,
    RuleGenerationFailed,
    Error,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Compliant => "compliant",
            Status::NonCompliantGaveUp => "non-compliant-gave-up",
            Status::RuleGenerationFailed => "rule-generation-failed",
            Status::Error => "error",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Compliant => 0,
            Status::Error => 1,
            Status::NonCompliantGaveUp => 2,
            Status::RuleGenerationFailed => 3,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Retrieved,
    RuleSubmitted,
    RuleChecked { accepted: bool },
    Preprocessed,
    Validated { compliant: bool },
    PatchAccepted,
    /// The phase ran out of model turns without reaching its goal.
    BudgetExhausted,
    Fault { message: String },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Retrieved => f.write_str("retrieved"),
            Event::RuleSubmitted => f.write_str("rule submitted"),
            Event::RuleChecked { accepted } => write!(f, "rule checked (accepted: {accepted})"),
            Event::Preprocessed => f.write_str("preprocessed"),
            Event::Validated { compliant } => write!(f, "validated (compliant: {compliant})"),
            Event::PatchAccepted => f.write_str("patch accepted"),
            Event::BudgetExhausted => f.write_str("turn budget exhausted"),
            Event::Fault { message } => write!(f, "fault: {message}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_rule_retries: u32,
    pub max_iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkflowState {
    pub phase: Phase,
    /// Rejected or abandoned rule submissions so far.
    pub rule_attempts: u32,
    /// Repair loops started so far.
    pub repair_iterations: u32,
    pub status: Option<Status>,
}

impl WorkflowState {
    pub fn start(retrieve_first: bool) -> Self {
        WorkflowState {
            phase: if retrieve_first { Phase::RetrieveOpa } else { Phase::GenerateRules },
            rule_attempts: 0,
            repair_iterations: 0,
            status: None,
        }
    }

    fn to(&self, phase: Phase) -> Self {
        WorkflowState { phase, ..self.clone() }
    }

    fn finish(&self, status: Status) -> Self {
        let phase = if status == Status::Compliant { Phase::Done } else { Phase::Failed };
        WorkflowState { phase, status: Some(status), ..self.clone() }
    }

    fn failed_attempt(&self, limits: Limits) -> Self {
        let attempts = self.rule_attempts + 1;
        let next = WorkflowState { rule_attempts: attempts, ..self.clone() };
        if attempts >= limits.max_rule_retries {
            next.finish(Status::RuleGenerationFailed)
        } else {
            next.to(Phase::GenerateRules)
        }
    }
}

/// One transition. Pairs the workflow never produces are orchestrator bugs.
pub fn step(state: &WorkflowState, event: &Event, limits: Limits) -> Result<WorkflowState, OrchestratorError> {
    use Event as E;
    use Phase as P;
    if let E::Fault { .. } = event {
        if !state.phase.is_terminal() {
            return Ok(state.finish(Status::Error));
        }
    }
    let next = match (state.phase, event) {
        (P::RetrieveOpa, E::Retrieved | E::BudgetExhausted) => state.to(P::GenerateRules),
        (P::GenerateRules, E::RuleSubmitted) => state.to(P::CheckRules),
        (P::GenerateRules, E::BudgetExhausted) => state.failed_attempt(limits),
        (P::CheckRules, E::RuleChecked { accepted: true }) => state.to(P::Preprocess),
        (P::CheckRules, E::RuleChecked { accepted: false }) => state.failed_attempt(limits),
        (P::Preprocess, E::Preprocessed) => state.to(P::Validate),
        (P::Validate, E::Validated { compliant: true }) => state.finish(Status::Compliant),
        (P::Validate, E::Validated { compliant: false }) => {
            if state.repair_iterations >= limits.max_iterations {
                state.finish(Status::NonCompliantGaveUp)
            } else {
                WorkflowState { repair_iterations: state.repair_iterations + 1, ..state.to(P::RetrieveIac) }
            }
        }
        (P::RetrieveIac, E::Retrieved | E::BudgetExhausted) => state.to(P::PatchInfra),
        (P::PatchInfra, E::PatchAccepted) => state.to(P::Preprocess),
        (P::PatchInfra, E::BudgetExhausted) => state.finish(Status::NonCompliantGaveUp),
        (P::Preprocess | P::Validate, E::BudgetExhausted) => state.finish(Status::Error),
        (phase, event) => {
            return Err(OrchestratorError::IllegalTransition { phase, event: event.to_string() });
        }
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIMITS: Limits = Limits { max_rule_retries: 3, max_iterations: 3 };

    fn at(phase: Phase) -> WorkflowState {
        WorkflowState { phase, ..WorkflowState::start(true) }
    }

    #[test]
    fn compliant_validation_is_terminal() {
        let s = step(&at(Phase::Validate), &Event::Validated { compliant: true }, LIMITS).unwrap();
        assert_eq!(s.phase, Phase::Done);
        assert_eq!(s.status, Some(Status::Compliant));
    }

    #[test]
    fn rejection_goes_back_to_generation() {
        let s = step(&at(Phase::CheckRules), &Event::RuleChecked { accepted: false }, LIMITS).unwrap();
        assert_eq!((s.phase, s.rule_attempts), (Phase::GenerateRules, 1));
        let last = WorkflowState { rule_attempts: 2, ..at(Phase::CheckRules) };
        let s = step(&last, &Event::RuleChecked { accepted: false }, LIMITS).unwrap();
        assert_eq!((s.phase, s.rule_attempts, s.status), (Phase::Failed, 3, Some(Status::RuleGenerationFailed)));
    }

    #[test]
    fn accepted_patch_replans() {
        let s = step(&at(Phase::PatchInfra), &Event::PatchAccepted, LIMITS).unwrap();
        assert_eq!(s.phase, Phase::Preprocess);
    }

    #[test]
    fn repair_cap() {
        let mut s = at(Phase::Validate);
        for i in 1..=3 {
            s = step(&s, &Event::Validated { compliant: false }, LIMITS).unwrap();
            assert_eq!((s.phase, s.repair_iterations), (Phase::RetrieveIac, i));
            s = at_with(&s, Phase::Validate);
        }
        let s = step(&s, &Event::Validated { compliant: false }, LIMITS).unwrap();
        assert_eq!(s.status, Some(Status::NonCompliantGaveUp));
        assert_eq!(s.repair_iterations, 3);
    }

    fn at_with(s: &WorkflowState, phase: Phase) -> WorkflowState {
        WorkflowState { phase, ..s.clone() }
    }

    #[test]
    fn illegal_pairs_are_errors() {
        assert!(matches!(
            step(&at(Phase::RetrieveOpa), &Event::PatchAccepted, LIMITS),
            Err(OrchestratorError::IllegalTransition { phase: Phase::RetrieveOpa, .. })
        ));
        assert!(step(&at(Phase::Done), &Event::Retrieved, LIMITS).is_err());
        assert!(step(&at(Phase::Done), &Event::Fault { message: "x".into() }, LIMITS).is_err());
    }

    #[test]
    fn faults_end_the_run() {
        let s = step(&at(Phase::Preprocess), &Event::Fault { message: "x".into() }, LIMITS).unwrap();
        assert_eq!(s.status, Some(Status::Error));
    }
}
