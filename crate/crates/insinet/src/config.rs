//! Plain-text run configuration (TOML) shared by every subcommand.

use std::path::Path;

use anyhow::{bail, Context, Result};
use insinet_core::dataset::AugmentationSpec;
use insinet_core::network::NetworkConfig;
use insinet_core::synth::SynthParams;
use insinet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Scene synthesis and tiling settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub scenes: usize,
    pub scene_height: usize,
    pub scene_width: usize,
    pub tile_size: usize,
    /// Tiling stride; defaults to the tile size (abutting tiles).
    pub stride: Option<usize>,
    pub seed: u64,
    pub synth: SynthParams,
    pub split_ratios: (u32, u32, u32),
    pub augment: AugmentationSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenes: 4,
            scene_height: 320,
            scene_width: 320,
            tile_size: 64,
            stride: None,
            seed: 0,
            synth: SynthParams::default(),
            split_ratios: (6, 2, 2),
            augment: AugmentationSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.tile_size)
    }
}

/// Which network preset to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPreset {
    /// Desk-scale: two pyramid stages, narrow channels.
    Tiny,
    /// The full backbone width and depth.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub preset: NetworkPreset,
    pub init_seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            preset: NetworkPreset::Tiny,
            init_seed: 0,
        }
    }
}

impl NetworkSection {
    pub fn build(&self, patch_size: usize) -> Result<NetworkConfig> {
        let mut cfg = match self.preset {
            NetworkPreset::Tiny => NetworkConfig::tiny(patch_size),
            NetworkPreset::Full => NetworkConfig::default_full(patch_size),
        };
        cfg.init_seed = self.init_seed;
        cfg.validate()
            .map_err(|e| anyhow::anyhow!("invalid network config: {e}"))?;
        Ok(cfg)
    }
}

/// Benchmark settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub scale_factors: Vec<usize>,
    /// T2 translation in pixels (rows, cols).
    pub misreg_shift: (i64, i64),
    /// Detection regions per ring test set.
    pub ring_regions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scale_factors: vec![2, 4, 8, 16],
            misreg_shift: (0, 4),
            ring_regions: 1,
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.scenes == 0 {
            bail!("data.scenes must be positive");
        }
        if self.data.tile_size == 0 || self.data.tile_size % 8 != 0 {
            bail!(
                "data.tile_size must be a positive multiple of 8, got {}",
                self.data.tile_size
            );
        }
        if self.data.scene_height < self.data.tile_size
            || self.data.scene_width < self.data.tile_size
        {
            bail!("scene dimensions must cover at least one tile");
        }
        self.data
            .augment
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid augmentation: {e}"))?;
        self.train
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid training config: {e}"))?;
        let (a, b, c) = self.data.split_ratios;
        if a == 0 || b == 0 || c == 0 {
            bail!("split ratios must all be positive");
        }
        for &f in &self.bench.scale_factors {
            if f < 2 || self.data.tile_size % f != 0 {
                bail!("scale factor {} must be >= 2 and divide the tile size", f);
            }
        }
        Ok(())
    }
}
