//! Experiment configuration files (JSON or TOML) with field-path errors.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use benefit_uq_core::evalkit::ExperimentSpec;

/// Reads and validates an experiment file. Missing keys take their defaults;
/// unknown keys are rejected with the offending path.
pub fn load_spec(path: &Path) -> anyhow::Result<ExperimentSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let spec = match ext.as_str() {
        "json" => parse_json(&text),
        "toml" => parse_toml(&text),
        other => bail!(
            "{}: unsupported config extension {other:?} (expected .json or .toml)",
            path.display()
        ),
    }
    .with_context(|| format!("invalid config {}", path.display()))?;
    spec.validate()
        .map_err(|e| anyhow!("invalid config {}: {e}", path.display()))?;
    Ok(spec)
}

pub fn parse_json(text: &str) -> anyhow::Result<ExperimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow!("at `{}`: {}", e.path(), e.inner()))
}

pub fn parse_toml(text: &str) -> anyhow::Result<ExperimentSpec> {
    let de = toml::Deserializer::parse(text).map_err(|e| anyhow!("{e}"))?;
    serde_path_to_error::deserialize(de).map_err(|e| anyhow!("at `{}`: {}", e.path(), e.inner()))
}
