//! Run manifests: tool version, command line, input/output hashes, seeds.
//!
//! Every command writes one next to its artifacts. Identical inputs and
//! seeds produce byte-identical primary outputs, so the hash chain in the
//! manifest is identical too (only the timestamp varies).

use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Serialize, Default)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub timestamp_epoch_s: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(seeds: Vec<u64>) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: std::env::args().collect(),
            seeds,
            timestamp_epoch_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            ..Default::default()
        }
    }

    pub fn input_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| CliError::internal(format!("manifest serialization: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }
}
