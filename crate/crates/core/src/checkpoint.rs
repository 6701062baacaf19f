//! Checkpoints: a TOML manifest describing every parameter (name, kind,
//! shape, byte offset) plus the network configuration, next to a blob of
//! little-endian `f32` values. Running statistics are included, so a loaded
//! network reproduces evaluation outputs bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Shape;
use crate::data::Preprocessor;
use crate::network::{BdgNet, NetworkConfig};
use crate::nn::ParamKind;
use crate::{Error, Result};

pub const FORMAT: &str = "bdgnet-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    /// `weight` or `buffer`.
    pub kind: String,
    pub shape: [usize; 4],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    /// Training iterations behind these weights.
    pub iterations: u64,
    /// Per-channel input standardization used in training.
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub network: NetworkConfig,
    pub params: Vec<ParamEntry>,
}

impl CheckpointManifest {
    /// Input preprocessing matching the training run.
    pub fn preprocessor(&self) -> Preprocessor {
        Preprocessor { size: self.network.input_size, mean: self.mean, std: self.std }
    }
}

/// Blob path belonging to a manifest path: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and its `.bin` blob. `pre` supplies the
/// standardization stored alongside the weights.
pub fn save(net: &BdgNet<f32>, iterations: u64, pre: &Preprocessor, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let mut bytes = Vec::new();
    let mut params = Vec::with_capacity(net.store().len());
    for (_, p) in net.store().iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            kind: match p.kind {
                ParamKind::Weight => "weight",
                ParamKind::Buffer => "buffer",
            }
            .into(),
            shape: p.value.shape().dims(),
            offset: bytes.len(),
        });
        for v in p.value.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        blob: blob.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
        iterations,
        mean: pre.mean,
        std: pre.std,
        network: net.config().clone(),
        params,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<CheckpointManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format `{}`", manifest.format)));
    }
    Ok(manifest)
}

/// Rebuilds the network described by the manifest at `path` and fills in its
/// parameters. Every parameter must be present with a matching shape.
pub fn load(path: &Path) -> Result<(BdgNet<f32>, CheckpointManifest)> {
    let manifest = load_manifest(path)?;
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut net = BdgNet::<f32>::new(&manifest.network, 0)?;
    if manifest.params.len() != net.store().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, the network expects {}",
            manifest.params.len(),
            net.store().len()
        )));
    }
    for entry in &manifest.params {
        let store = net.store_mut();
        let id = store.find(&entry.name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        let target = store.get_mut(id);
        let [n, c, h, w] = entry.shape;
        if target.shape() != Shape::new(n, c, h, w) {
            return Err(Error::Checkpoint(format!("`{}` has shape {:?}, expected {}", entry.name, entry.shape, target.shape())));
        }
        let len = 4 * target.shape().numel();
        let chunk = bytes
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("blob too short for `{}`", entry.name)))?;
        for (dst, src) in target.as_mut_slice().iter_mut().zip(chunk.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("chunks of four bytes"));
        }
    }
    Ok((net, manifest))
}
