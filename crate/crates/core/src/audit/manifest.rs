use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{canonical_json_pretty, digest_value, sha256_hex};
use crate::triage::TriageThresholds;

pub const TOOL_VERSION: &str = concat!("clausetriage ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED_SET: [u64; 5] = [40, 41, 42, 43, 44];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Synthetic,
    Rank,
    Classify,
    Tune,
    Evaluate,
    Triage,
    Sweep,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synthetic => "synthetic",
            Stage::Rank => "rank",
            Stage::Classify => "classify",
            Stage::Tune => "tune",
            Stage::Evaluate => "evaluate",
            Stage::Triage => "triage",
            Stage::Sweep => "sweep",
        }
    }
}

/// Canonical record of one stage run.
///
/// `digest` covers every field except `tool_version`, `outputs` and itself,
/// so two runs over equal seed, config and inputs share a digest even across
/// tool releases. No wall-clock or host values are recorded anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub stage: Stage,
    pub seed: Option<u64>,
    pub seed_set: Vec<u64>,
    pub config: Value,
    pub config_digest: String,
    /// Input file name (not path) to SHA-256.
    pub input_digests: BTreeMap<String, String>,
    pub metrics: Value,
    pub thresholds: Option<TriageThresholds>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub digest: String,
}

const UNDIGESTED: [&str; 3] = ["tool_version", "outputs", "digest"];

impl RunManifest {
    pub fn new(stage: Stage, seed: Option<u64>, config: Value) -> Self {
        let config_digest = digest_value(&config);
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            stage,
            seed,
            seed_set: DEFAULT_SEED_SET.to_vec(),
            config,
            config_digest,
            input_digests: BTreeMap::new(),
            metrics: Value::Object(Default::default()),
            thresholds: None,
            outputs: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
            digest: String::new(),
        }
    }

    /// Records the SHA-256 of `path` under its file name.
    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_digests.insert(file_key(path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.outputs.insert(file_key(path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn compute_digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        if let Value::Object(map) = &mut value {
            for k in UNDIGESTED {
                map.remove(k);
            }
        }
        digest_value(&value)
    }

    /// Fills in `digest` and returns it.
    pub fn seal(&mut self) -> String {
        self.digest = self.compute_digest();
        self.digest.clone()
    }

    pub fn to_canonical_string(&self) -> String {
        canonical_json_pretty(&serde_json::to_value(self).expect("manifest serializes"))
    }

    pub fn write(&mut self, path: &Path) -> std::io::Result<()> {
        if self.digest.is_empty() {
            self.seal();
        }
        std::fs::write(path, self.to_canonical_string())
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_tool_version_and_outputs() {
        let mut a = RunManifest::new(Stage::Rank, Some(42), serde_json::json!({"seed": 42}));
        let mut b = a.clone();
        b.tool_version = "something else".into();
        b.outputs.insert("x".into(), "y".into());
        assert_eq!(a.seal(), b.seal());

        let mut c = a.clone();
        c.seed = Some(41);
        assert_ne!(a.digest, c.seal());
    }

    #[test]
    fn canonical_text_is_stable() {
        let mut m = RunManifest::new(Stage::Tune, None, serde_json::json!({"z": 1, "a": 2}));
        m.seal();
        let text = m.to_canonical_string();
        assert_eq!(text, m.clone().to_canonical_string());
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.find("\"config\"").unwrap() < text.find("\"digest\"").unwrap());
    }
}
