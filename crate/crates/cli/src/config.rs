//! Layered run configuration: clap defaults, then a config file, then flags
//! given on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Reads either a flat `key = value` file (`#` starts a comment) or a JSON
/// object such as a previously written effective config.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))? {
            Value::Object(m) => Ok(m),
            _ => bail!("{}: expected a JSON object", path.display()),
        };
    }
    let mut out = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').with_context(|| format!("{}:{}: expected key = value", path.display(), n + 1))?;
        out.insert(k.trim().replace('-', "_"), Value::String(v.trim().to_string()));
    }
    Ok(out)
}

/// Converts a textual file value to the JSON type of the field it replaces.
fn coerce(raw: &Value, like: &Value) -> Value {
    let Value::String(s) = raw else { return raw.clone() };
    let scalar = |t: &str| serde_json::from_str(t).unwrap_or_else(|_| Value::String(t.to_string()));
    match like {
        Value::String(_) => raw.clone(),
        Value::Array(_) if !s.starts_with('[') => {
            Value::Array(s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(scalar).collect())
        }
        _ => scalar(s),
    }
}

/// Applies the config file to every field not set explicitly on the
/// command line.
pub fn resolve<T: Serialize + DeserializeOwned>(args: T, matches: &ArgMatches, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else { return Ok(args) };
    let Value::Object(mut map) = serde_json::to_value(&args)? else { bail!("arguments do not serialise to an object") };
    for (k, v) in read_config_file(path)? {
        let Some(current) = map.get(&k) else { bail!("{}: unknown key '{k}'", path.display()) };
        let explicit = matches.try_get_raw(&k).ok().flatten().is_some() && matches.value_source(&k) == Some(ValueSource::CommandLine);
        if !explicit {
            let v = coerce(&v, current);
            map.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(map)).with_context(|| format!("{}: invalid configuration value", path.display()))
}

/// Writes the effective configuration as pretty JSON.
pub fn write_effective<T: Serialize>(path: &Path, args: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(args)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// `dir/out.jsonl` → `dir/out.config.json`.
pub fn sidecar_path(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.config.json"))
}
