//! Run configuration: one JSON document, optionally patched by `key=value`
//! overrides before it is deserialised.

use std::fs;
use std::path::{Path, PathBuf};

use comdense::model::ModelConfig;
use comdense::optim::AdamHyper;
use comdense::train::TrainSettings;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prepared directory or raw `train/valid/test.txt` directory.
    pub data: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub optimizer: AdamHyper,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.optimizer.validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Validation(
                "seeds: at least one seed is required".into(),
            ));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Validation("seeds: duplicate seed".into()));
        }
        Ok(())
    }

    /// Settings for one seed of the run.
    pub fn settings_for(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            seed,
            ..self.train.clone()
        }
    }
}

/// Parse `value` as JSON, falling back to a bare string.
fn parse_override_value(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

/// Apply `path.to.key=value` to a JSON document, creating objects as needed.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!(
            "override key `{path}` is malformed"
        )));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Validation(format!(
                "override `{path}`: `{key}` is not inside an object"
            ))
        })?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        CliError::Validation(format!(
            "override `{path}` does not address an object field"
        ))
    })?;
    obj.insert(
        keys[keys.len() - 1].to_string(),
        parse_override_value(value),
    );
    Ok(())
}

pub fn from_value(doc: Value) -> Result<RunConfig, CliError> {
    serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("config: {e}")))
}

/// Read, patch and validate a config file.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config = from_value(doc)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = from_value(json!({"data": "d"})).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.seeds, vec![0]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(from_value(json!({"data": "d", "bogus": 1})).is_err());
        assert!(from_value(json!({"data": "d", "model": {"widht": 2}})).is_err());
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let mut doc = json!({"data": "d"});
        apply_override(&mut doc, "model.width=100").unwrap();
        apply_override(&mut doc, "model.variant=SharedOnly").unwrap();
        apply_override(&mut doc, "seeds=[1,2]").unwrap();
        let c = from_value(doc).unwrap();
        assert_eq!(c.model.width, 100);
        assert_eq!(c.seeds, vec![1, 2]);
        assert!(apply_override(&mut json!({}), "novalue").is_err());
        assert!(apply_override(&mut json!({"a": 1}), "a.b=2").is_err());
    }

    #[test]
    fn dropout_out_of_range_names_field() {
        let mut doc = json!({"data": "d"});
        apply_override(&mut doc, "model.input_dropout=1.2").unwrap();
        let err = from_value(doc).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("input_dropout"), "{err}");
    }

    #[test]
    fn round_trips_through_json() {
        let c = from_value(json!({"data": "d", "seeds": [3, 4]})).unwrap();
        let back = from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
