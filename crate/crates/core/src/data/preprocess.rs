use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::autograd::{resize_bilinear_plane, Shape, Tensor};
use crate::bdm::{ideal_bdm_with, BdmOptions, BinaryMask};
use crate::Result;

use super::augment::Transform;
use super::ingest::SampleRecord;

/// Per-channel mean of natural-image RGB values in `[0, 1]`.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel standard deviation matching [`IMAGENET_MEAN`].
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Resizing and standardization applied to every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessor {
    pub size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self { size: 352, mean: IMAGENET_MEAN, std: IMAGENET_STD }
    }
}

/// Bilinear resize of an RGB image to `h x w`, returning three channel
/// planes with values in `[0, 1]`.
pub fn resize_rgb_bilinear(img: &RgbImage, h: usize, w: usize) -> Vec<f64> {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        let plane: Vec<f64> = img.pixels().map(|p| f64::from(p[ch]) / 255.0).collect();
        out.extend(resize_bilinear_plane(&plane, sh, sw, h, w, false));
    }
    out
}

/// Nearest-neighbour resize; output pixel `(r, c)` reads source
/// `(floor(r * H / h), floor(c * W / w))`.
pub fn resize_mask_nearest(mask: &BinaryMask, h: usize, w: usize) -> BinaryMask {
    let (sh, sw) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |r, c| mask.get(r * sh / h, c * sw / w))
}

/// A resized sample before augmentation and target generation.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: String,
    pub size: usize,
    /// Standardized channel planes, `3 * size * size` values.
    pub image: Vec<f32>,
    pub mask: BinaryMask,
}

/// Network-ready tensors for a batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(N, 3, S, S)`.
    pub images: Tensor<f32>,
    /// `(N, 1, S, S)` of zeros and ones.
    pub masks: Tensor<f32>,
    /// Ideal boundary maps `(N, 1, S, S)` of the (augmented) masks.
    pub bdms: Tensor<f32>,
}

impl Preprocessor {
    /// Standardized `3 x size x size` planes of an image of any size.
    pub fn image_planes(&self, img: &RgbImage) -> Vec<f32> {
        let plane = self.size * self.size;
        resize_rgb_bilinear(img, self.size, self.size)
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = i / plane;
                ((v - self.mean[ch]) / self.std[ch]) as f32
            })
            .collect()
    }

    /// `(1, 3, S, S)` tensor of an image.
    pub fn image_tensor(&self, img: &RgbImage) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 3, self.size, self.size), self.image_planes(img))
    }

    pub fn prepare(&self, record: &SampleRecord) -> PreparedSample {
        PreparedSample {
            id: record.id.clone(),
            size: self.size,
            image: self.image_planes(&record.image),
            mask: resize_mask_nearest(&record.mask, self.size, self.size),
        }
    }
}

impl PreparedSample {
    /// Applies `t` to image and mask, then computes the ideal boundary map
    /// of the transformed mask. Returns `(image, mask, bdm)` planes.
    pub fn materialize(&self, t: Transform, bdm: &BdmOptions) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
        let n = self.size;
        let image = t.apply(&self.image, n);
        let mask = BinaryMask::new(n, n, t.apply(self.mask.as_slice(), n))?;
        let map = ideal_bdm_with(&mask, bdm)?;
        let mask_f = mask.as_slice().iter().map(|&v| f32::from(v)).collect();
        let bdm_f = map.values.iter().map(|&v| v as f32).collect();
        Ok((image, mask_f, bdm_f))
    }
}

/// Stacks samples into a batch, applying one transform per sample.
pub fn stack_batch(samples: &[&PreparedSample], transforms: &[Transform], bdm: &BdmOptions) -> Result<Batch> {
    assert_eq!(samples.len(), transforms.len());
    let n = samples.len();
    let s = samples.first().map_or(0, |x| x.size);
    let (mut images, mut masks, mut bdms) = (Vec::new(), Vec::new(), Vec::new());
    for (sample, &t) in samples.iter().zip(transforms) {
        let (i, m, b) = sample.materialize(t, bdm)?;
        images.extend(i);
        masks.extend(m);
        bdms.extend(b);
    }
    Ok(Batch {
        ids: samples.iter().map(|x| x.id.clone()).collect(),
        images: Tensor::from_vec(Shape::new(n, 3, s, s), images),
        masks: Tensor::from_vec(Shape::new(n, 1, s, s), masks),
        bdms: Tensor::from_vec(Shape::new(n, 1, s, s), bdms),
    })
}
