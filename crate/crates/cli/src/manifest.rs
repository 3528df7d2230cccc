use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub library_version: String,
    /// SHA-256 of the resolved config as compact JSON.
    pub config_hash: String,
    /// The resolved config; feeding this file back as `--config` reruns it.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, serde_json::Value>,
    pub timings_s: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<String>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> anyhow::Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(RunManifest {
            manifest_version: MANIFEST_VERSION,
            command: command.into(),
            library_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(&config),
            config,
            seeds: BTreeMap::new(),
            timings_s: BTreeMap::new(),
            outputs: Vec::new(),
            resumed_from: None,
        })
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let tmp = dir.join(".manifest.json.tmp");
        let dest = dir.join("manifest.json");
        fs::write(&tmp, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &dest).with_context(|| format!("moving manifest into {}", dest.display()))?;
        Ok(())
    }
}
