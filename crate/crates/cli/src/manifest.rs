//! Run manifests: enough metadata to reproduce a run exactly on the same
//! binary version. Deliberately no timestamps, so identical runs produce
//! byte-identical output directories.

use std::path::Path;

use popsim_core::error::{Result, SimError};
use sha2::{Digest, Sha256};

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub population: usize,
    pub horizon: u64,
    pub threads: usize,
}

pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        // Replay check: warn (never fail) when the directory holds a run
        // of a different configuration.
        if let Ok(old) = std::fs::read_to_string(&path) {
            if let Ok(prev) = serde_json::from_str::<Manifest>(&old) {
                if prev.config_hash != self.config_hash {
                    eprintln!(
                        "warning: {} holds a manifest for config hash {}, overwriting with {}",
                        dir.display(),
                        prev.config_hash,
                        self.config_hash
                    );
                }
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::Format(format!("manifest: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}
