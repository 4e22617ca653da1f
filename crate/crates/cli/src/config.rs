//! `key = value` config files, spliced into the argument list ahead of the
//! command-line flags so that flags win.

use std::ffi::OsString;
use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment and keys may be written
/// with dashes or underscores.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Flags equivalent to `entries`. `true` becomes a bare switch and `false`
/// is dropped.
pub fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

/// Finds `--config PATH` or `--config=PATH` among the raw arguments.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Returns `args` with the config file's flags inserted right after the
/// subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let flags = to_flags(&parse(&text)?);
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(args.len());
    let mut out = args[..sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[sub..]);
    Ok(out)
}
