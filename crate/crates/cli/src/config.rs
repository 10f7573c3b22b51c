//! Pipeline configuration: one JSON document with a section per stage.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xgen_core::crossfield::{DEFAULT_GT_ITERATIONS, DEFAULT_SMOOTH_WEIGHT};
use xgen_core::mesh::{DEFAULT_MARGIN, UMBILIC_THRESHOLD};
use xgen_core::metrics::DEFAULT_CHAMFER_SAMPLES;
use xgen_core::tsdf::{DEFAULT_SHELL_EPSILON, DEFAULT_TRUNCATION};
use xgen_net::data::PrepareConfig;
use xgen_net::{NetworkConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizeSection {
    /// Gap between the longest bounding-box axis and the cube faces.
    pub margin: f64,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Quantization resolution of the network input.
    pub resolution: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { resolution: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsdfSection {
    pub resolution: u32,
    pub truncation: f64,
    pub shell_epsilon: f64,
    pub shell_samples: usize,
    /// Surface points appended to the shell set with value 0.
    pub surface_in_shell: usize,
}

impl Default for TsdfSection {
    fn default() -> Self {
        Self {
            resolution: 64,
            truncation: DEFAULT_TRUNCATION,
            shell_epsilon: DEFAULT_SHELL_EPSILON,
            shell_samples: 100_000,
            surface_in_shell: 25_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtFieldSection {
    pub iterations: usize,
    pub smooth_weight: f64,
}

impl Default for GtFieldSection {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_GT_ITERATIONS,
            smooth_weight: DEFAULT_SMOOTH_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Copies per source mesh; copy 0 is unrotated, the rest are randomly rotated.
    pub augmentations: u32,
    /// Oriented surface samples per shape (the network input and the set P).
    pub surface_samples: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            augmentations: 1,
            surface_samples: 150_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Sites with lower curvature anisotropy are excluded from AE.
    pub anisotropy_mask: f64,
    pub chamfer_samples: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            anisotropy_mask: UMBILIC_THRESHOLD,
            chamfer_samples: DEFAULT_CHAMFER_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// The only seed: dataset sampling, augmentation, init and training.
    pub seed: u64,
    pub normalize: NormalizeSection,
    pub grid: GridSection,
    pub tsdf: TsdfSection,
    pub gt_field: GtFieldSection,
    pub dataset: DatasetSection,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            normalize: NormalizeSection::default(),
            grid: GridSection::default(),
            tsdf: TsdfSection::default(),
            gt_field: GtFieldSection::default(),
            dataset: DatasetSection::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsSection::default(),
        };
        c.sync();
        c
    }
}

/// Keys that mirror a value owned by another section. They may appear in a
/// config file only with the owner's value.
const DERIVED_KEYS: [(&str, &str, &str); 3] = [
    ("network", "input_resolution", "grid.resolution"),
    ("train", "seed", "seed"),
    ("train", "shell_epsilon", "tsdf.shell_epsilon"),
];

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let mut c: Self = serde_json::from_value(raw.clone()).context("invalid config")?;
        let given: Vec<(&str, &str, &str, serde_json::Value)> = DERIVED_KEYS
            .iter()
            .filter_map(|&(s, k, o)| raw.get(s).and_then(|v| v.get(k)).map(|v| (s, k, o, v.clone())))
            .collect();
        c.sync();
        let synced = serde_json::to_value(&c)?;
        for (section, key, owner, value) in given {
            if synced[section][key] != value {
                bail!("{section}.{key} = {value} conflicts with {owner}, which it is derived from");
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Copies owned values into the sections that mirror them.
    fn sync(&mut self) {
        self.network.input_resolution = self.grid.resolution;
        self.train.seed = self.seed;
        self.train.shell_epsilon = self.tsdf.shell_epsilon;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync();
    }

    /// Sets the input grid and TSDF resolution together.
    pub fn set_resolution(&mut self, resolution: u32) -> Result<()> {
        self.grid.resolution = resolution;
        self.tsdf.resolution = resolution;
        self.sync();
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if !(0.0..0.5).contains(&self.normalize.margin) {
            bail!("normalize.margin {} outside [0, 0.5)", self.normalize.margin);
        }
        if !self.tsdf.resolution.is_power_of_two() || self.tsdf.resolution < 2 {
            bail!("tsdf.resolution {} is not a power of two", self.tsdf.resolution);
        }
        if !(self.tsdf.shell_epsilon > 0.0 && self.tsdf.shell_epsilon <= self.tsdf.truncation) {
            bail!(
                "tsdf.shell_epsilon {} must be in (0, truncation {}]",
                self.tsdf.shell_epsilon,
                self.tsdf.truncation
            );
        }
        if self.dataset.augmentations == 0 || self.dataset.surface_samples == 0 {
            bail!("dataset.augmentations and dataset.surface_samples must be positive");
        }
        if self.metrics.chamfer_samples == 0 {
            bail!("metrics.chamfer_samples must be positive");
        }
        Ok(())
    }

    /// Canonical JSON: struct fields in declaration order, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn prepare(&self) -> PrepareConfig {
        PrepareConfig {
            tsdf_resolution: self.tsdf.resolution,
            truncation: self.tsdf.truncation,
            shell_epsilon: self.tsdf.shell_epsilon,
            shell_samples: self.tsdf.shell_samples,
            surface_samples: self.dataset.surface_samples,
            surface_in_shell: self.tsdf.surface_in_shell,
            gt_iterations: self.gt_field.iterations,
            gt_smooth_weight: self.gt_field.smooth_weight,
        }
    }
}
