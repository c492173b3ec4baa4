use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the flags given on the command line onto a JSON config file.
///
/// Both sides use the flag names as keys. Flags left unset serialize to
/// nothing, so the file value survives for them.
pub fn merge<T>(cli: &T, config: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(cli)?)?);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut base: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    // A manifest written by an earlier run keeps its flags under `args`.
    if let Some(args) = base.get_mut("args").map(Value::take) {
        base = args;
    }
    let Value::Object(base_map) = &mut base else {
        anyhow::bail!("config {} must hold a JSON object", path.display());
    };
    if let Value::Object(flags) = serde_json::to_value(cli)? {
        for (k, v) in flags {
            if !v.is_null() {
                base_map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).with_context(|| format!("config {} does not match the flags", path.display()))
}
