//! Flat `key=value` configuration files.

use std::ffi::OsString;
use std::path::Path;

use anyhow::Result;

use crate::error::input_error;

/// Parse a configuration file into command-line tokens.
///
/// Keys are flag names with or without the leading dashes; underscores
/// become dashes. `true` turns a switch on and `false` leaves it off.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(input_error(format!(
                "{}: line {}: expected key=value, got {line:?}",
                path.display(),
                i + 1
            )));
        };
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(input_error(format!("{}: line {}: empty key", path.display(), i + 1)));
        }
        if key == "config" {
            return Err(input_error(format!("{}: line {}: nested config files are not supported", path.display(), i + 1)));
        }
        match value {
            "true" => out.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => {
                out.push(OsString::from(format!("--{key}")));
                out.push(OsString::from(v));
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(OsString::from(v));
        }
    }
    None
}

/// Insert the tokens of the `--config` file right after the subcommand so
/// that flags given on the command line take precedence.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read config file {}: {e}", path.display())))?;
    let extra = parse_config(&text, path)?;
    let split = args.len().min(2);
    let mut out: Vec<OsString> = args[..split].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[split..]);
    Ok(out)
}
