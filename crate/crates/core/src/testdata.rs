//! Fixture text shared by unit tests.

pub const CORES_POLICY: &str = include_str!("../../../fixtures/policies/cores_exact.rego");
pub const VM_4CORE_TF: &str = include_str!("../../../fixtures/infra/vm_4core.tf");
pub const VM_2CORE_TF: &str = include_str!("../../../fixtures/infra/vm_2core.tf");
