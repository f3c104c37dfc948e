//! Run manifests: enough to re-run a command and check its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: serde_json::Value,
    /// Input path (as given) to SHA-256 of its contents.
    pub input_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub artifact_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_snapshot: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_owned(),
            config_snapshot,
            input_hashes: BTreeMap::new(),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        let digest = hash_file(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
