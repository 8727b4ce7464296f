use std::path::Path;

use proghash::sem::WeightConfig;
use proghash::stru::{DEFAULT_M, DEFAULT_SEED_POSITION, DEFAULT_SEED_SIGN, MAX_M, MIN_M};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub kmeans: u64,
    pub position: u64,
    pub sign: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            kmeans: 0,
            position: DEFAULT_SEED_POSITION,
            sign: DEFAULT_SEED_SIGN,
        }
    }
}

/// Parameters shared by the pipeline commands. Loaded from an optional TOML
/// file; command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Expected function embedding dimension; taken from the corpus when unset.
    pub d: Option<usize>,
    pub n_clusters: usize,
    pub iterations: usize,
    pub m: u32,
    pub seeds: Seeds,
    pub weights: WeightConfig,
    pub k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d: None,
            n_clusters: 1024,
            iterations: proghash::kmeans::DEFAULT_ITERATIONS,
            m: DEFAULT_M,
            seeds: Seeds::default(),
            weights: WeightConfig::default(),
            k: 100,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::from(proghash::Error::from(e)).context(path))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.d == Some(0) {
            return Err(CliError::config("d must be positive"));
        }
        if self.n_clusters == 0 {
            return Err(CliError::config("n_clusters must be positive"));
        }
        if self.iterations == 0 {
            return Err(CliError::config("iterations must be positive"));
        }
        if self.k == 0 {
            return Err(CliError::config("k must be positive"));
        }
        if !self.m.is_power_of_two() || !(MIN_M..=MAX_M).contains(&self.m) {
            return Err(CliError::config(format!(
                "m={} must be a power of two in [{MIN_M}, {MAX_M}]",
                self.m
            )));
        }
        self.weights.validate()?;
        Ok(())
    }
}
