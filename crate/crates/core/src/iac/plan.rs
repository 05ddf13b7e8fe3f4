use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::hcl::{BlockBody, BodyItem, InfraFile};
use super::IacError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEntry {
    pub address: String,
    #[serde(rename = "type")]
    pub resource_type: String,
    pub name: String,
    pub values: Value,
}

/// A Terraform execution plan. `root` is the whole JSON document as read,
/// with `planned_values.root_module.resources` guaranteed to exist.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDocument {
    pub format_version: String,
    root: Value,
    resources: Vec<ResourceEntry>,
}

impl PlanDocument {
    /// The document a policy sees as `input`.
    pub fn root(&self) -> &Value {
        &self.root
    }

    pub fn resources(&self) -> &[ResourceEntry] {
        &self.resources
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.root).expect("plan serialization")
    }
}

fn entry_error(index: usize, reason: impl Into<String>) -> IacError {
    IacError::InvalidResource { index, reason: reason.into() }
}

fn entry(index: usize, v: &Value) -> Result<ResourceEntry, IacError> {
    let field = |k: &str| -> Result<String, IacError> {
        match v.get(k).and_then(Value::as_str) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(entry_error(index, format!("missing `{k}`"))),
        }
    };
    let address = field("address")?;
    let resource_type = field("type")?;
    let name = field("name")?;
    let base = if v.get("mode").and_then(Value::as_str) == Some("data") {
        format!("data.{resource_type}.{name}")
    } else {
        format!("{resource_type}.{name}")
    };
    // counted and for_each resources carry an index suffix
    let suffix_ok = address
        .strip_prefix(&base)
        .is_some_and(|rest| rest.is_empty() || (rest.starts_with('[') && rest.ends_with(']')));
    if !suffix_ok {
        return Err(entry_error(index, format!("address `{address}` does not match `{base}`")));
    }
    let values = match v.get("values") {
        None | Some(Value::Null) => Value::Object(Map::new()),
        Some(o @ Value::Object(_)) => o.clone(),
        Some(_) => return Err(entry_error(index, "`values` is not an object")),
    };
    Ok(ResourceEntry { address, resource_type, name, values })
}

pub fn parse_plan_json(text: &str) -> Result<PlanDocument, IacError> {
    let root: Value = serde_json::from_str(text).map_err(|e| IacError::NotJson(e.to_string()))?;
    plan_from_value(root)
}

pub fn plan_from_value(mut root: Value) -> Result<PlanDocument, IacError> {
    let obj = root.as_object_mut().ok_or_else(|| IacError::NotJson("top level is not an object".into()))?;
    let format_version = obj.get("format_version").and_then(Value::as_str).unwrap_or_default().to_string();
    let pv = obj
        .get_mut("planned_values")
        .and_then(Value::as_object_mut)
        .ok_or(IacError::MissingPlannedValues)?;
    let rm = pv
        .get_mut("root_module")
        .and_then(Value::as_object_mut)
        .ok_or(IacError::MissingRootModule)?;
    let res = rm.entry("resources").or_insert_with(|| Value::Array(Vec::new()));
    if res.is_null() {
        *res = Value::Array(Vec::new());
    }
    let list = res.as_array().ok_or_else(|| entry_error(0, "`resources` is not an array"))?;
    let resources = list.iter().enumerate().map(|(k, v)| entry(k, v)).collect::<Result<Vec<_>, _>>()?;
    Ok(PlanDocument { format_version, root, resources })
}

fn body_values(body: &BlockBody) -> Map<String, Value> {
    let mut out = Map::new();
    for item in &body.items {
        match item {
            BodyItem::Attribute { name, value } => {
                out.insert(name.clone(), value.to_json());
            }
            BodyItem::Block(b) => {
                let slot = out.entry(b.kind.clone()).or_insert_with(|| Value::Array(Vec::new()));
                if let Value::Array(a) = slot {
                    a.push(Value::Object(body_values(&b.body)));
                }
            }
        }
    }
    out
}

/// Builds the plan Terraform would report for `infra`, without Terraform.
/// Nested blocks always become arrays, repeats appended in source order.
pub fn synthesize_plan(infra: &InfraFile) -> Result<PlanDocument, IacError> {
    let mut seen = std::collections::HashSet::new();
    let mut resources = Vec::new();
    for b in &infra.blocks {
        let address = b.address();
        if !seen.insert(address.clone()) {
            return Err(IacError::DuplicateAddress(address));
        }
        // an attribute sharing a name with a nested block would be ambiguous
        for item in &b.body.items {
            if let BodyItem::Attribute { name, .. } = item {
                if b.body.blocks(name).next().is_some() {
                    return Err(IacError::Conflict { address, name: name.clone() });
                }
            }
        }
        resources.push(json!({
            "address": address,
            "mode": "managed",
            "type": b.resource_type,
            "name": b.name,
            "values": Value::Object(body_values(&b.body)),
        }));
    }
    plan_from_value(json!({
        "format_version": "1.2",
        "planned_values": {"root_module": {"resources": resources}},
    }))
}
