//! Layered run settings: built-in defaults, then a section of the `--config`
//! TOML file, then `EFOENT_<KEY>` environment variables, then command-line
//! flags. The merged settings are kept as JSON so they can be echoed into
//! every output's metadata.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::graph_io::read_text;

pub const ENV_PREFIX: &str = "EFOENT_";

/// Parsed `--config` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_text(path)?;
        let table = text.parse::<toml::Table>().map_err(|e| Error::in_file(path, e))?;
        Ok(Self { table })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table = text.parse::<toml::Table>().map_err(|e| Error::data(format!("config: {e}")))?;
        Ok(Self { table })
    }

    /// The `[section]` table as JSON, or an empty object.
    fn section(&self, name: &str) -> Result<Map<String, Value>> {
        match self.table.get(name) {
            None => Ok(Map::new()),
            Some(toml::Value::Table(t)) => match serde_json::to_value(t).expect("toml converts to json") {
                Value::Object(m) => Ok(m),
                _ => unreachable!("a table converts to an object"),
            },
            Some(_) => Err(Error::data(format!("config: `{name}` must be a table"))),
        }
    }
}

/// Reads an environment value with the type of the default it replaces.
fn env_value(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let bad = || Error::usage(format!("{ENV_PREFIX}{}: cannot parse `{raw}`", key.to_uppercase()));
    Ok(match like {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => serde_json::json!(raw.parse::<f64>().map_err(|_| bad())?),
        Value::Number(_) => match raw.parse::<u64>() {
            Ok(v) => serde_json::json!(v),
            Err(_) => serde_json::json!(raw.parse::<f64>().map_err(|_| bad())?),
        },
        Value::Array(_) => Value::Array(
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| Value::String(s.trim().to_string()))
                .collect(),
        ),
        Value::Null => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
        _ => Value::String(raw.to_string()),
    })
}

/// Merges the layers for one command and deserializes the result.
///
/// `flags` serializes only the options given on the command line.
pub fn merge<S, F>(
    section: &str,
    file: &ConfigFile,
    env: impl IntoIterator<Item = (String, String)>,
    flags: &F,
) -> Result<(S, Value)>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(S::default()).expect("settings serialize") else {
        unreachable!("settings are structs");
    };
    let defaults = merged.clone();
    for (k, v) in file.section(section)? {
        if !defaults.contains_key(&k) {
            return Err(Error::data(format!("config: unknown key `{section}.{k}`")));
        }
        merged.insert(k, v);
    }
    for (name, raw) in env {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let key = key.to_lowercase();
        if let Some(like) = defaults.get(&key) {
            merged.insert(key.clone(), env_value(&key, &raw, like)?);
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let value = Value::Object(merged);
    let settings = serde_json::from_value(value.clone())
        .map_err(|e| Error::usage(format!("invalid {section} settings: {e}")))?;
    Ok((settings, value))
}

/// The process environment, filtered to this tool's prefix.
pub fn process_env() -> Vec<(String, String)> {
    std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
}
