//! Natural-language policy to Rego, checked against Terraform plans, with an
//! LLM-driven repair loop around it.

pub mod diag;
pub mod harness;
pub mod iac;
pub mod llm;
pub mod orchestrator;
pub mod rag;
pub mod registry;
pub mod tools;
pub mod rego;

#[cfg(test)]
mod testdata;
