//! TOML run configuration. Command-line flags override these fields.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use csfall::data::SynthConfig;
use csfall::nn::{InceptionSpec, TrainSchedule};
use csfall::recon::ReconConfig;
use csfall::sensing::{Family, SensingConfig};

use crate::UsageError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub data: SynthConfig,
    pub sensing: SensingSection,
    pub model: ModelSection,
    pub schedule: TrainSchedule,
    pub recon: ReconConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingSection {
    pub family: Family,
    pub block: usize,
    pub ratio: usize,
    pub seed: u64,
    pub sub_block: Option<usize>,
    pub window: Option<usize>,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
}

impl Default for SensingSection {
    fn default() -> Self {
        SensingSection {
            family: Family::Gaussian,
            block: 16,
            ratio: 4,
            seed: 1,
            sub_block: None,
            window: None,
            kernel: None,
            stride: None,
        }
    }
}

impl SensingSection {
    pub const SUPPORTED_RATIOS: [usize; 5] = [1, 4, 16, 32, 64];

    pub fn to_config(&self) -> anyhow::Result<SensingConfig> {
        if !Self::SUPPORTED_RATIOS.contains(&self.ratio) {
            return Err(UsageError(format!(
                "ratio {} is not one of {:?}",
                self.ratio,
                Self::SUPPORTED_RATIOS
            ))
            .into());
        }
        let mut cfg = SensingConfig::for_ratio(self.family, self.block, self.ratio, self.seed)?;
        if let Some(s) = self.sub_block {
            cfg.sub_block = s;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(k) = self.kernel {
            cfg.kernel = k;
        }
        if let Some(t) = self.stride {
            cfg.stride = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub stem: Option<usize>,
    pub blocks: Option<[InceptionSpec; 4]>,
    /// Class count; defaults to the manifest's.
    pub classes: Option<usize>,
    /// Initialization and shuffling seed.
    pub seed: u64,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}
