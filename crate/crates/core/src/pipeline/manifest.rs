use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fsutil::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// What one stage consumed and produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the configuration keys the stage reads.
    pub config_digest: String,
    /// Input path to content digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the experiment directory) to content digest.
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    /// Effective configuration of the most recent command.
    pub config: BTreeMap<String, String>,
    /// Digest of the rule table the factor graph and R2N model were built on.
    pub rule_set_digest: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest { version: MANIFEST_VERSION, config: BTreeMap::new(), rule_set_digest: None, stages: BTreeMap::new() }
    }
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: unreadable manifest: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(PipelineError::Config(format!("{}: unsupported manifest version {}", path.display(), m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))
    }

    /// Stage that recorded `output` among its outputs.
    pub fn producer_of(&self, output: &str) -> Option<(&str, &StageRecord)> {
        self.stages.iter().find(|(_, r)| r.outputs.contains_key(output)).map(|(k, r)| (k.as_str(), r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), RunManifest::default());
        let mut m = RunManifest::default();
        m.stages.insert(
            "split".into(),
            StageRecord { config_digest: "c".into(), outputs: [("train.tsv".to_string(), "d".to_string())].into(), ..Default::default() },
        );
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.producer_of("train.tsv").unwrap().0, "split");
        assert!(back.producer_of("test.tsv").is_none());
    }
}
