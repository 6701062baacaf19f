//! Run configuration: a TOML file with one section per concern.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/kvasir"
//!
//! [network]
//! skip_levels = [3, 4]
//! sigma = 5.0
//!
//! [optimizer]
//! lr = 1e-4
//! batch_size = 16
//! iterations = 20000
//!
//! [data]
//! manifest = "layout.toml"
//! ```
//!
//! Every key can be overridden with [`RunConfig::set`] using its dotted path,
//! for example `optimizer.lr` or `network.use_bdgm`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bdm::{BdmOptions, BoundaryMode};
use crate::data::{Augmentation, Preprocessor, IMAGENET_MEAN, IMAGENET_STD};
use crate::losses::LossConfig;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::network::NetworkConfig;
use crate::optim::AdamConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Print progress every this many iterations; 0 disables it.
    pub log_every: usize,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 1e-4, batch_size: 16, iterations: 20_000, log_every: 50, checkpoint_every: 0 }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

/// How ideal boundary maps are generated; the width comes from `network.sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdmConfig {
    pub normalized: bool,
    pub boundary: BoundaryMode,
}

impl Default for BdmConfig {
    fn default() -> Self {
        Self { normalized: true, boundary: BoundaryMode::Inner }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset layout manifest.
    pub manifest: Option<PathBuf>,
    /// Directory the manifest paths are relative to; defaults to the manifest's directory.
    pub root: Option<PathBuf>,
    /// Datasets to use; empty means every dataset in the manifest.
    pub datasets: Vec<String>,
    /// Seed of the train/test split; defaults to the run seed.
    pub split_seed: Option<u64>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Binarization threshold for Dice and IoU.
    pub threshold: f64,
    pub augment: Augmentation,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            root: None,
            datasets: Vec::new(),
            split_seed: None,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            threshold: DEFAULT_THRESHOLD,
            augment: Augmentation::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub bdm: BdmConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            bdm: BdmConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses a command-line value as a TOML literal, falling back to a string.
/// A bare comma list such as `3,4` becomes an array when `like` is one.
fn parse_value(raw: &str, like: Option<&toml::Value>) -> toml::Value {
    let text = match like {
        Some(toml::Value::Array(_)) if !raw.trim_start().starts_with('[') => format!("[{raw}]"),
        _ => raw.to_string(),
    };
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if o.batch_size == 0 || o.iterations == 0 {
            return Err(Error::Config("batch_size and iterations must be at least 1".into()));
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", o.lr)));
        }
        if self.data.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("data.std entries must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.data.threshold) {
            return Err(Error::Config("data.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Overrides one key by dotted path, e.g. `set("optimizer.lr", "3e-4")`.
    /// Values are TOML literals; bare words are taken as strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(config_err)?;
        let parts: Vec<&str> = key.split('.').collect();
        let (leaf, path) = parts.split_last().ok_or_else(|| config_err("empty key"))?;
        let mut table = root.as_table_mut().expect("configs serialize to tables");
        for part in path {
            table = table
                .get_mut(*part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section `{part}` in `{key}`")))?;
        }
        let parsed = parse_value(value, table.get(*leaf));
        table.insert(leaf.to_string(), parsed);
        let updated: Self = root.try_into().map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn preprocessor(&self) -> Preprocessor {
        Preprocessor { size: self.network.input_size, mean: self.data.mean, std: self.data.std }
    }

    pub fn bdm_options(&self) -> BdmOptions {
        BdmOptions { sigma: self.network.sigma, normalized: self.bdm.normalized, boundary: self.bdm.boundary }
    }

    pub fn split_seed(&self) -> u64 {
        self.data.split_seed.unwrap_or(self.seed)
    }

    /// Data root: the explicit root, else the manifest's directory.
    pub fn data_root(&self) -> Option<PathBuf> {
        self.data
            .root
            .clone()
            .or_else(|| self.data.manifest.as_ref().map(|m| m.parent().map(Path::to_path_buf).unwrap_or_default()))
    }
}
