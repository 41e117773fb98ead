//! Reproducibility plumbing: the seeded PRNG, strict config loading, run
//! manifests, audit trails and seed sweeps.
//!
//! All floating-point values that leave the process go through [`real17`]:
//! a decimal string with 17 significant digits, which round-trips `f64`
//! bit-exactly. JSON documents are written with sorted keys via
//! [`canonical_json`], so equal content always means equal bytes.

pub mod config;
pub mod manifest;
pub mod rng;
pub mod sweep;
pub mod trail;

use serde::{Deserialize, Deserializer, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub use config::{load_config, load_config_value, ConfigError, StageConfig};
pub use manifest::{RunManifest, Stage, DEFAULT_SEED_SET, TOOL_VERSION};
pub use rng::SeededRng;
pub use sweep::{run_seed_sweep, SweepReport};
pub use trail::{read_audit, replay_audit, AuditHeader, AuditReadError, AuditRecord, AuditWriter};

/// Formats `x` with 17 significant digits in scientific notation.
pub fn real17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_real17(s: &str) -> Result<f64, std::num::ParseFloatError> {
    s.parse::<f64>()
}

/// `serde(with = "real17_serde")` for `f64` fields.
pub mod real17_serde {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&real17(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        parse_real17(&s).map_err(serde::de::Error::custom)
    }
}

/// Rebuilds `value` with every object's keys in sorted order, independent
/// of how `serde_json::Map` orders insertion.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Compact canonical encoding, used for digests.
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(&canonicalize(value)).expect("Value serialization is infallible")
}

/// Pretty canonical encoding with a trailing newline, used for files.
pub fn canonical_json_pretty(value: &Value) -> String {
    let mut s =
        serde_json::to_string_pretty(&canonicalize(value)).expect("Value serialization is infallible");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_value(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}
