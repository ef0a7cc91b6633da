use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vkdnw_core::search::SearchConfig;
use vkdnw_core::statlab::MleExperimentConfig;

/// Settings read from `--config`. Search and FIM fields sit at the top level
/// exactly as in [`SearchConfig`]; the maximum-likelihood experiment lives under `mle`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    pub mle: MleExperimentConfig,
}

/// Rejects keys that no config struct knows about; serde would otherwise drop them silently.
fn check_keys(given: &Value, known: &Value, path: &str) -> Result<()> {
    let (Value::Object(given), Value::Object(known)) = (given, known) else {
        return Ok(());
    };
    for (key, value) in given {
        let here = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match known.get(key) {
            None => bail!("unknown config key `{here}`"),
            // Tagged enums (the sampling rule, the init scheme) have variant-specific keys.
            Some(inner) if inner.get("kind").is_none() => check_keys(value, inner, &here)?,
            Some(_) => {}
        }
    }
    Ok(())
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let known = serde_json::to_value(FileConfig::default())?;
    check_keys(&value, &known, "").with_context(|| format!("validating config {}", path.display()))?;
    serde_json::from_value(value).with_context(|| format!("reading config {}", path.display()))
}
