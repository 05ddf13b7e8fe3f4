//! The slice of JSON Schema used by tool descriptors: `type`, `properties`,
//! `required`, `additionalProperties: false`, `enum`, `items`.

use serde_json::Value;

fn type_ok(expected: &str, v: &Value) -> bool {
    match expected {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|f| f.fract() == 0.0),
        "null" => v.is_null(),
        _ => true,
    }
}

/// First violation of `schema` by `value`, as `path: problem`.
pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    check(schema, value, "$")
}

fn check(schema: &Value, v: &Value, path: &str) -> Result<(), String> {
    let Some(s) = schema.as_object() else {
        return Ok(());
    };
    if let Some(t) = s.get("type").and_then(Value::as_str) {
        if !type_ok(t, v) {
            return Err(format!("{path}: expected {t}"));
        }
    }
    if let Some(options) = s.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            let shown: Vec<String> = options.iter().map(Value::to_string).collect();
            return Err(format!("{path}: must be one of {}", shown.join(", ")));
        }
    }
    if let Some(obj) = v.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        if let Some(req) = s.get("required").and_then(Value::as_array) {
            for name in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(name) {
                    return Err(format!("{path}: missing required property `{name}`"));
                }
            }
        }
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(sub, child, &format!("{path}.{k}"))?,
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{path}: unexpected property `{k}`"));
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (s.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            check(items, child, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn schema() -> Value {
        json!({
            "type": "object",
            "properties": {
                "query": {"type": "string"},
                "collection": {"type": "string", "enum": ["opa", "iac"]},
                "k": {"type": "integer"}
            },
            "required": ["query", "collection"],
            "additionalProperties": false
        })
    }

    #[test]
    fn accepts_valid() {
        assert_eq!(validate(&schema(), &json!({"query": "x", "collection": "opa", "k": 2})), Ok(()));
    }

    #[test]
    fn reports_first_problem() {
        assert_eq!(validate(&schema(), &json!({"query": "x"})), Err("$: missing required property `collection`".into()));
        assert_eq!(
            validate(&schema(), &json!({"query": 1, "collection": "opa"})),
            Err("$.query: expected string".into())
        );
        assert!(validate(&schema(), &json!({"query": "x", "collection": "web"})).unwrap_err().contains("one of"));
        assert!(validate(&schema(), &json!({"query": "x", "collection": "opa", "z": 1})).unwrap_err().contains("`z`"));
        assert_eq!(validate(&schema(), &json!([])), Err("$: expected object".into()));
    }
}
