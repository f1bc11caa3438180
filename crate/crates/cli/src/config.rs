//! Flat `key = value` configuration files.
//!
//! Every key names a long flag of the active subcommand. File entries are
//! spliced in front of the command-line flags so the flags win.

use std::ffi::OsString;
use std::path::Path;

use kernelsurf::{Error, Result};

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(char::is_whitespace))
            .map(|(k, v)| (k.trim(), v.trim()))
            .unwrap_or((line, "true"));
        let key = key.trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Error::InvalidConfig(format!("config line {}: bad key in {raw:?}", n + 1)));
        }
        out.push((key, value.to_string()));
    }
    Ok(out)
}

fn entries_to_args(entries: Vec<(String, String)>, switches: &[&str]) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (key, value) in entries {
        if switches.contains(&key.as_str()) {
            match value.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" | "off" => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "config key {key} expects a boolean, got {value}"
                    )))
                }
            }
        } else {
            args.push(format!("--{key}").into());
            args.push(value.into());
        }
    }
    Ok(args)
}

/// Remove `--config PATH` (or `--config=PATH`) and splice the file's
/// entries in directly after the first argument naming a subcommand.
pub fn expand(argv: Vec<OsString>, subcommands: &[&str], switches: &[&str]) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            path = Some(
                it.next()
                    .ok_or_else(|| Error::InvalidConfig("--config needs a path".into()))?,
            );
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file_args = entries_to_args(parse(&text)?, switches)?;
    let split = rest
        .iter()
        .position(|a| subcommands.iter().any(|s| a == s))
        .map_or(rest.len(), |i| i + 1);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(file_args);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}
