//! Single-image inference at the network resolution, mapped back to the
//! source image size.

use image::RgbImage;

use crate::data::Preprocessor;
use crate::metrics::PredictionMap;
use crate::network::BdgNet;
use crate::Result;

/// Probability mask and boundary map of one image, both at the image's own size.
#[derive(Clone, Debug)]
pub struct ImagePrediction {
    pub mask: PredictionMap,
    /// Predicted boundary map; all ones when the network has no boundary module,
    /// since the decoder is then gated by a constant one map.
    pub bdm: PredictionMap,
}

fn plane_to_map(values: &[f32], size: usize) -> Result<PredictionMap> {
    PredictionMap::new(size, size, values.iter().map(|&v| f64::from(v).clamp(0.0, 1.0)).collect())
}

/// Resizes `img` to the network input size, runs an eval-mode forward pass
/// and resamples both outputs bilinearly to the original extent.
pub fn predict_image(net: &BdgNet<f32>, pre: &Preprocessor, img: &RgbImage) -> Result<ImagePrediction> {
    let size = pre.size;
    let out = net.predict(&pre.image_tensor(img))?;
    let (h, w) = (img.height() as usize, img.width() as usize);
    let mask = plane_to_map(out.mask.as_slice(), size)?.resized(h, w);
    let bdm = match &out.bdm {
        Some(b) => plane_to_map(b.as_slice(), size)?.resized(h, w),
        None => PredictionMap::new(h, w, vec![1.0; h * w])?,
    };
    Ok(ImagePrediction { mask, bdm })
}
