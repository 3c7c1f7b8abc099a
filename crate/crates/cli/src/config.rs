//! Versioned JSON run configuration. Command-line flags override file values.

use std::path::Path;

use mfm_nhpp::model::MfmConfig;
use mfm_nhpp::sampler::ChainOptions;
use mfm_nhpp::summary::DahlOptions;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: MfmConfig,
    pub chain: ChainOptions,
    pub dahl: DahlOptions,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: MfmConfig::default(),
            chain: ChainOptions::default(),
            dahl: DahlOptions::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Preset number (1 or 2); layout and lambdas override its parts.
    pub preset: Option<u8>,
    pub layout: Option<String>,
    /// Path to a grid CSV of 1-based true labels.
    pub layout_file: Option<String>,
    pub lambdas: Option<Vec<f64>>,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { preset: None, layout: None, layout_file: None, lambdas: None, resolution: 20, seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(format!(
                "config {} has version {}, this build reads version {CONFIG_VERSION}",
                path.display(),
                cfg.version
            ));
        }
        Ok(cfg)
    }
}
