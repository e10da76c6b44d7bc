//! `--config` files: `key=value` lines whose keys are long flag names.
//! Values from the file are spliced in ahead of the real command line, so a
//! flag given on the command line wins.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Returns the config path if `args` (without the program name) carry one.
fn config_path(args: &[OsString]) -> Result<Option<OsString>> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return match it.next() {
                Some(p) => Ok(Some(p.clone())),
                None => bail!("--config needs a path"),
            };
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

/// Turns config text into `--key value` pairs. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value", n + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            bail!("config line {}: bad key `{key}`", n + 1);
        }
        out.push(format!("--{key}").into());
        out.push(value.trim().into());
    }
    Ok(out)
}

/// Expands `--config` for the subcommand in `argv[1]`.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let Some(path) = config_path(&argv[2..])? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let mut out = argv[..2].to_vec();
    out.extend(parse(&text)?);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}
