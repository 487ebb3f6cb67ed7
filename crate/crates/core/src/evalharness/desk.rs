//! The frozen desk-scale dataset: a synthetic city, seeded tile sampling,
//! oracle fields at 64x64 and a 200/20/20 layout split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flowsim::FlowConfig;
use crate::geomodel::{sample_dataset, synth::synth_city, synth::SynthCityConfig, SamplerConfig};
use crate::interface::dataset::{simulate_dataset, Dataset, SplitSpec, TileSet};
use crate::interface::{read_bytes, to_pretty_json, write_bytes};

pub const DESK_CONFIG_FILE: &str = "desk.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub city: SynthCityConfig,
    /// Tiles sampled; a few more than the split needs so discarded layouts
    /// do not shrink any partition.
    pub tiles: usize,
    pub sampler: SamplerConfig,
    pub resolution: usize,
    pub flow: FlowConfig,
    pub split: SplitSpec,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            city: SynthCityConfig {
                seed: 11,
                ..Default::default()
            },
            tiles: 250,
            sampler: SamplerConfig {
                seed: 5,
                ..Default::default()
            },
            resolution: 64,
            flow: FlowConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

/// Builds the dataset in `dir`, or reuses it when a complete build for the
/// same config is already there and every hash verifies.
pub fn prepare_desk_dataset(dir: &Path, config: &DeskConfig) -> Result<Dataset> {
    let marker = dir.join(DESK_CONFIG_FILE);
    if let Ok(bytes) = read_bytes(&marker) {
        if bytes == to_pretty_json(config) {
            match Dataset::open(dir).and_then(|d| d.verify().map(|_| d)) {
                Ok(d) => return Ok(d),
                Err(e) => log::warn!("rebuilding desk dataset in {}: {e}", dir.display()),
            }
        }
    }
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    }
    let city = synth_city(&config.city)?;
    let tiles = sample_dataset(&city, config.tiles, &config.sampler)?;
    TileSet::new(config.sampler.clone(), tiles).save(dir)?;
    simulate_dataset(dir, config.resolution, &config.flow, &config.split)?;
    write_bytes(&marker, &to_pretty_json(config))?;
    Dataset::open(dir)
}
