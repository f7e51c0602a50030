//! The subset of JSON Schema that tool descriptors use in practice: `type`,
//! `properties`, `required`, `additionalProperties`, `enum` and `items`.
//! Unknown keywords are ignored.

use serde_json::Value;

fn type_matches(name: &str, value: &Value) -> bool {
    match name {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        "number" => value.is_number(),
        "integer" => {
            value.is_i64() || value.is_u64() || value.as_f64().is_some_and(|f| f.fract() == 0.0)
        }
        _ => true,
    }
}

/// Checks `value` against `schema`, reporting the first violation with a
/// JSON-pointer-like path.
pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    validate_at(schema, value, "")
}

fn validate_at(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    let Some(schema) = schema.as_object() else {
        return Ok(());
    };
    let here = if path.is_empty() { "/" } else { path };

    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(name) => type_matches(name, value),
            Value::Array(names) => names.iter().filter_map(Value::as_str).any(|n| type_matches(n, value)),
            _ => true,
        };
        if !ok {
            return Err(format!("{here}: expected type {ty}, got {value}"));
        }
    }

    if let Some(Value::Array(allowed)) = schema.get("enum") {
        if !allowed.contains(value) {
            return Err(format!("{here}: {value} is not one of {}", Value::Array(allowed.clone())));
        }
    }

    if let Some(obj) = value.as_object() {
        if let Some(Value::Array(required)) = schema.get("required") {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    return Err(format!("{here}: missing required property `{key}`"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (key, v) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => validate_at(sub, v, &format!("{path}/{key}"))?,
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => {
                        return Err(format!("{here}: unexpected property `{key}`"));
                    }
                    Some(sub @ Value::Object(_)) => validate_at(sub, v, &format!("{path}/{key}"))?,
                    _ => {}
                },
            }
        }
    }

    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate_at(items, v, &format!("{path}/{i}"))?;
        }
    }
    Ok(())
}
