use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use tilewise_core::config::OutputFormat;

/// Renders a report as pretty JSON or as `path = value` lines.
pub fn render<T: Serialize>(report: &T, format: OutputFormat) -> Result<String> {
    let value = serde_json::to_value(report)?;
    Ok(match format {
        OutputFormat::Json => serde_json::to_string_pretty(&value)? + "\n",
        OutputFormat::Text => {
            let mut out = String::new();
            flatten(&value, "", &mut out);
            out
        }
    })
}

fn flatten(value: &Value, prefix: &str, out: &mut String) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(v, &key(k), out);
            }
        }
        Value::Array(items) if items.iter().all(|v| !v.is_object() && !v.is_array()) => {
            let joined: Vec<String> = items.iter().map(scalar).collect();
            out.push_str(&format!("{prefix} = [{}]\n", joined.join(", ")));
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, &key(&i.to_string()), out);
            }
        }
        other => out.push_str(&format!("{prefix} = {}\n", scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn write_bytes(bytes: &[u8], path: &Path) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn text_flattening() {
        let v = json!({"a": {"b": 1, "c": [1, 2]}, "d": [{"e": "x"}]});
        let text = render(&v, OutputFormat::Text).unwrap();
        assert_eq!(text, "a.b = 1\na.c = [1, 2]\nd.0.e = x\n");
    }
}
