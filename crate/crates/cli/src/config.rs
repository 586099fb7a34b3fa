//! Plain-text run configuration: `key = value` lines whose keys are the
//! long flag names of a subcommand. Values from `--config` are inserted
//! ahead of the command line, so explicit flags win.

use std::ffi::OsString;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::artifacts::Coded;

/// Keys that describe where and how a run executes rather than what it
/// computes; they never enter a snapshot.
const RUNTIME_KEYS: &[&str] = &["config", "out", "workers"];

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Coded::new("E_CONFIG", format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Replaces `--config PATH` with the flags it lists.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = argv.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else { return Ok(argv) };
    let (path, consumed) = match argv[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => {
            let p = argv
                .get(pos + 1)
                .ok_or_else(|| Coded::new("E_USAGE", "--config needs a path"))?;
            (p.to_string_lossy().into_owned(), 2)
        }
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Coded::new("E_IO", format!("reading config {path}: {e}")))?;
    let subcommand = argv.get(1).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut flags = Vec::new();
    for (k, v) in parse_config(&text).with_context(|| format!("in {path}"))? {
        if k == "command" {
            if v != subcommand {
                return Err(Coded::new("E_CONFIG", format!("{path} was written by `{v}`, not `{subcommand}`")).into());
            }
            continue;
        }
        if RUNTIME_KEYS.contains(&k.as_str()) {
            continue;
        }
        match v.as_str() {
            "true" => flags.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => flags.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    let mut out: Vec<OsString> = argv[..2.min(argv.len())].to_vec();
    out.extend(flags);
    out.extend(argv.iter().enumerate().skip(2).filter(|(i, _)| *i < pos || *i >= pos + consumed).map(|(_, a)| a.clone()));
    Ok(out)
}

/// Resolved `key = value` lines for `args`, sorted by key.
pub fn snapshot(command: &str, args: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(args)?;
    let mut text = format!("# shortcut {}\ncommand = {command}\n", env!("CARGO_PKG_VERSION"));
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let v = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            text.push_str(&format!("{} = {v}\n", k.replace('_', "-")));
        }
    }
    Ok(text)
}
