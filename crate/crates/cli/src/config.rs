//! Run configuration: one JSON document with `model`, `train` and `spacing`
//! sections, plus `key=value` overrides addressed by dotted path.

use std::path::Path;

use airwrite_core::model::ModelConfig;
use airwrite_core::training::TrainConfig;
use airwrite_core::trajectory::DEFAULT_SPACING;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub spacing: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            spacing: DEFAULT_SPACING,
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let from_file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let typed: RunConfig = serde_json::from_value(from_file)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            doc = serde_json::to_value(typed).expect("config serializes");
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if !(cfg.spacing > 0.0 && cfg.spacing.is_finite()) {
            return Err(CliError::Usage(format!(
                "spacing must be positive, got {}",
                cfg.spacing
            )));
        }
        Ok(cfg)
    }
}

/// Sets `a.b.c=value`. The path must already exist in the document; the
/// value is read as JSON, falling back to a plain string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` is not key=value")))?;
    let mut slot = &mut *doc;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
