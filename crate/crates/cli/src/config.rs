//! `--config run.json`: JSON keys are long flag names, appended to argv unless the
//! flag is already present.

use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn has_flag(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

/// Removes `--config` from `argv` and appends the file's values as flags.
pub fn merge(argv: Vec<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_owned());
        } else {
            out.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(out);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let json: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(map) = json else {
        bail!("config {path} must be a JSON object");
    };
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(&out, &flag) {
            continue;
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                out.push(flag);
                out.push(joined.join(","));
            }
            v => {
                out.push(flag);
                out.push(scalar(&v)?);
            }
        }
    }
    Ok(out)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => bail!("config values must be scalars or arrays of scalars, got {v}"),
    }
}
