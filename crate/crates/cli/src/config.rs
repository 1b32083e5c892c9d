//! `key = value` config files. Each key is a long flag name without the
//! leading dashes; repeated keys are allowed for repeatable flags. Values from
//! the file are spliced in front of the command-line flags, so flags given on
//! the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses config text into `--key=value` arguments. `true` becomes a bare
/// `--key`; `false` drops the key.
pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`", i + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key `{key}`", i + 1);
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => out.push(format!("--{key}={v}")),
        }
    }
    Ok(out)
}

/// Expands `--config FILE` (or `--config=FILE`) into the flags it holds,
/// placed directly after the subcommand name.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a file path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("cannot read config {path}"))?;
    let flags = parse_config(&text).with_context(|| format!("config {path}"))?;
    // program name, subcommand, then the file's flags
    let split = rest.len().min(2);
    let mut out: Vec<String> = rest[..split].to_vec();
    out.extend(flags);
    out.extend(rest[split..].iter().cloned());
    Ok(out)
}
