//! Strict JSON stage configs.
//!
//! A config file is an object whose keys must all be known to the stage.
//! Missing optional keys take their documented defaults, and the fully
//! materialized config is what gets echoed into manifests.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} has the wrong type: {message}")]
    TypeError { key: String, message: String },
    #[error("missing required config key {0:?}")]
    MissingRequired(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub trait StageConfig: Serialize + DeserializeOwned {
    /// Keys with no default.
    const REQUIRED: &'static [&'static str];

    /// Every optional key with its default value.
    fn defaults() -> Map<String, Value>;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }

    /// The full key set, required keys first then defaults in sorted order.
    fn keys() -> Vec<String> {
        let mut keys: Vec<String> = Self::REQUIRED.iter().map(|k| k.to_string()).collect();
        keys.extend(Self::defaults().keys().cloned());
        keys
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialization is infallible")
    }
}

pub fn load_config<T: StageConfig>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    load_config_value(value)
}

/// Validates a parsed document against `T`'s schema and applies defaults.
pub fn load_config_value<T: StageConfig>(value: Value) -> Result<T, ConfigError> {
    let Value::Object(given) = value else {
        return Err(ConfigError::TypeError {
            key: String::from("<root>"),
            message: String::from("expected a JSON object"),
        });
    };
    let mut merged = T::defaults();
    let mut unknown: Vec<&String> = given
        .keys()
        .filter(|k| !merged.contains_key(*k) && !T::REQUIRED.contains(&k.as_str()))
        .collect();
    unknown.sort();
    if let Some(k) = unknown.first() {
        return Err(ConfigError::UnknownKey((*k).clone()));
    }
    for req in T::REQUIRED {
        if !given.contains_key(*req) {
            return Err(ConfigError::MissingRequired(req.to_string()));
        }
    }
    for (k, v) in given {
        merged.insert(k, v);
    }
    let config: T = serde_path_to_error::deserialize(Value::Object(merged)).map_err(|e| {
        ConfigError::TypeError {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })?;
    config.validate().map_err(ConfigError::Invalid)?;
    Ok(config)
}

/// Overlays `overrides` on the object in `base` (flags beat file values).
pub fn merge_overrides(base: Value, overrides: Map<String, Value>) -> Value {
    let mut map = match base {
        Value::Object(m) => m,
        other => return other,
    };
    for (k, v) in overrides {
        map.insert(k, v);
    }
    Value::Object(map)
}
