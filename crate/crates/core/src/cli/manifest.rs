use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{sha256_hex, write_text};
use crate::error::Result;

/// What a run produced and from which inputs. Holds no wall-clock data, so
/// identical inputs give an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub calibration_hash: String,
    pub seed_base: u64,
    pub output_paths: Vec<String>,
    /// The fully defaulted config the hash was taken over.
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(config: &RunConfig, output_paths: Vec<String>) -> Self {
        let calibration = serde_json::to_vec(&config.calibration).expect("calibration serializes");
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(&config.canonical_bytes()),
            calibration_hash: sha256_hex(&calibration),
            seed_base: config.campaign.seed_base,
            output_paths,
            config: config.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}
