//! `key=value` configuration files, merged underneath command-line flags.
//!
//! Keys are long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored. Every entry becomes `--key=value`
//! and is inserted before the user's own arguments, so a flag given on the
//! command line wins over the file.

use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {line:?}", n + 1);
        };
        let key = k.trim();
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, in either `--config x` or
/// `--config=x` form. The last occurrence counts.
pub fn find_config_arg(args: &[String]) -> Option<String> {
    let mut found = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        }
    }
    found
}

/// Returns `args` with the config file's entries spliced in right after the
/// first of `commands` (or at the front when none is present).
pub fn merge(args: Vec<String>, commands: &[&str]) -> Result<Vec<String>> {
    let Some(path) = find_config_arg(&args[1..]) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let entries = parse(&text).with_context(|| format!("in config {path}"))?;
    let at = args
        .iter()
        .skip(1)
        .position(|a| commands.contains(&a.as_str()))
        .map(|i| i + 2)
        .unwrap_or(1);
    let mut out = args[..at].to_vec();
    out.extend(entries.into_iter().map(|(k, v)| format!("--{k}={v}")));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
