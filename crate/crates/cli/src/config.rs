//! Config layering: defaults < JSON file < `--override` < `--seed`.

use std::path::Path;

use serde_json::{Map, Value};

use crate::Failure;

pub fn merged(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Value, Failure> {
    let mut v = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure {
                code: 1,
                kind: "config",
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => Value::Object(Map::new()),
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("override '{o}' is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set(&mut v, key, value)?;
    }
    if let Some(s) = seed {
        set(&mut v, "seed", Value::from(s))?;
    }
    Ok(v)
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Failure::input(format!("bad key '{key}'")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Failure::input(format!("'{key}': '{}' is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Unknown keys are rejected by the config types themselves.
pub fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure {
        code: 1,
        kind: "config",
        message: e.to_string(),
    })
}
