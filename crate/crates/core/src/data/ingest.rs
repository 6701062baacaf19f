use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::bdm::BinaryMask;
use crate::{Error, Result};

/// Where one dataset's images and masks live, relative to the data root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLayout {
    pub images: PathBuf,
    pub masks: PathBuf,
    #[serde(default = "default_image_extensions")]
    pub image_extensions: Vec<String>,
    #[serde(default = "default_mask_extensions")]
    pub mask_extensions: Vec<String>,
    /// Number of training images; the rest form the test set.
    #[serde(default)]
    pub train_count: Option<usize>,
}

fn default_image_extensions() -> Vec<String> {
    ["png", "jpg", "jpeg", "bmp", "tif", "tiff"].map(String::from).to_vec()
}

fn default_mask_extensions() -> Vec<String> {
    ["png", "jpg", "jpeg", "bmp", "tif", "tiff"].map(String::from).to_vec()
}

/// Dataset layout file:
///
/// ```toml
/// [datasets.kvasir]
/// images = "Kvasir/images"
/// masks = "Kvasir/masks"
/// image_extensions = ["jpg"]
/// train_count = 900
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutManifest {
    pub datasets: BTreeMap<String, DatasetLayout>,
}

impl LayoutManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("layout manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout manifests always serialize")
    }
}

/// One image with its binarized mask.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub id: String,
    pub dataset: String,
    pub image: RgbImage,
    pub mask: BinaryMask,
}

fn has_extension(path: &Path, exts: &[String]) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Files in `dir` with one of `exts`, keyed and sorted by stem.
fn files_by_stem(dir: &Path, exts: &[String]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !has_extension(&path, exts) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_string);
        let Some(stem) = stem else { continue };
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!("stem `{stem}` is ambiguous: {} and {}", prev.display(), path.display())));
        }
    }
    Ok(out)
}

/// Image files of `dir`, sorted by stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    Ok(files_by_stem(dir, &default_image_extensions())?.into_iter().collect())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

/// Loads every image/mask pair of one dataset, matched by file stem and
/// sorted by stem. An image without a mask (or the reverse) is an error
/// naming the stem.
pub fn ingest_dataset(root: &Path, name: &str, layout: &DatasetLayout) -> Result<Vec<SampleRecord>> {
    let images = files_by_stem(&root.join(&layout.images), &layout.image_extensions)?;
    let masks = files_by_stem(&root.join(&layout.masks), &layout.mask_extensions)?;
    if let Some(stem) = images.keys().find(|s| !masks.contains_key(*s)) {
        return Err(Error::MissingMask(stem.clone()));
    }
    if let Some(stem) = masks.keys().find(|s| !images.contains_key(*s)) {
        return Err(Error::MissingImage(stem.clone()));
    }
    images
        .iter()
        .map(|(stem, path)| {
            let image = load_rgb(path)?;
            let mask = BinaryMask::load(&masks[stem])?;
            if (mask.height(), mask.width()) != (image.height() as usize, image.width() as usize) {
                return Err(Error::Data(format!(
                    "`{stem}`: image is {}x{} but mask is {}x{}",
                    image.height(),
                    image.width(),
                    mask.height(),
                    mask.width()
                )));
            }
            Ok(SampleRecord { id: stem.clone(), dataset: name.to_string(), image, mask })
        })
        .collect()
}

/// Every dataset of `manifest`, in dataset-name order.
pub fn ingest(root: &Path, manifest: &LayoutManifest) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for (name, layout) in &manifest.datasets {
        out.extend(ingest_dataset(root, name, layout)?);
    }
    Ok(out)
}
