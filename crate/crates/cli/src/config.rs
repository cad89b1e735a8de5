//! `--config file.toml`: per-subcommand tables turned into flags.
//!
//! ```toml
//! [score]
//! method = ["uprop", "pe"]
//! agg = "avg,rms"
//! pmi-mode = "calibrated"
//! ```
//!
//! Config flags are inserted right after the subcommand name; keys whose
//! flag also appears on the command line are skipped, so flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

const SUBCOMMANDS: [&str; 5] = ["run", "score", "eval", "simulate", "report"];

fn find_config(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn flag_values(key: &str, value: &toml::Value) -> Result<Vec<OsString>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => bail!("config key `{key}`: unsupported value {other}"),
        })
    };
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag.into()],
        toml::Value::Boolean(false) => vec![],
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            vec![flag.into(), parts.join(",").into()]
        }
        v => vec![flag.into(), scalar(v)?.into()],
    })
}

pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = find_config(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path.display()))?;
    let doc: toml::Table = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let Some(pos) = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let sub = argv[pos].to_string_lossy().to_string();
    for key in doc.keys() {
        if !SUBCOMMANDS.contains(&key.as_str()) {
            bail!("config {}: unknown table `{key}`", path.display());
        }
    }
    // list flags append rather than override, so drop config keys the user
    // passed explicitly
    let given: Vec<String> = argv[pos + 1..]
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            s.strip_prefix("--").map(|f| f.split('=').next().unwrap_or_default().to_string())
        })
        .collect();
    let mut extra = Vec::new();
    if let Some(table) = doc.get(&sub) {
        let table = table
            .as_table()
            .with_context(|| format!("config {}: `{sub}` must be a table", path.display()))?;
        for (k, v) in table {
            if k == "config" {
                bail!("config {}: `config` cannot be nested", path.display());
            }
            if !given.contains(&k.replace('_', "-")) {
                extra.extend(flag_values(k, v)?);
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
