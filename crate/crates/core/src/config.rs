//! Flat `key = value` configuration files.
//!
//! Files are TOML restricted to dotted keys, e.g. `training.k = 64` or
//! `state.PedestrianOccluded = [0.0, 0.3, 0.0, 0.7]`. Unknown keys are
//! rejected by the target types.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn from_flat_toml<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))
}

/// One `dotted.key = value` line per leaf, keys sorted.
pub fn to_flat_toml<T: Serialize>(value: &T) -> Result<String, ConfigError> {
    let table = toml::Table::try_from(value).map_err(|e| ConfigError(e.to_string()))?;
    let mut lines = Vec::new();
    flatten("", &table, &mut lines);
    lines.sort();
    let mut out = lines.join("\n");
    out.push('\n');
    Ok(out)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push(format!("{key} = {other}")),
        }
    }
}
