//! Layered run configuration: built-in defaults, then an optional JSON file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Environment variable naming the directory that holds run outputs.
pub const OUT_ROOT_VAR: &str = "BFGNN_OUT";

fn object(v: Value, what: &str) -> Result<Map<String, Value>, CliError> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Config(format!("{what} must be a JSON object"))),
    }
}

/// Merges `flags` over the config file over `T::default()`. Flags left unset
/// serialize as null and do not override anything.
pub fn resolve<T, F>(flags: &F, file: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut merged = object(serde_json::to_value(T::default())?, "defaults")?;
    if let Some(path) = file {
        let text = crate::io::read(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.into(), source: e })?;
        for (k, v) in object(v, "config file")? {
            if !merged.contains_key(&k) {
                return Err(CliError::Config(format!("unknown config key `{k}` in {}", path.display())));
            }
            merged.insert(k, v);
        }
    }
    for (k, v) in object(serde_json::to_value(flags)?, "flags")? {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

/// The output directory: the explicit one, or `<root>/<command>` where the
/// root comes from the environment and falls back to `runs`.
pub fn out_dir(explicit: Option<&PathBuf>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(command)
        }
    }
}
