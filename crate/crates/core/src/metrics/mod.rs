//! Evaluation metrics: Dice, IoU, weighted F-measure, S-measure, max
//! E-measure and MAE, plus per-dataset reports.
//!
//! Dice and IoU are computed on predictions binarized at a threshold (0.5 by
//! default). The structural metrics take continuous predictions in `[0, 1]`
//! as they are, without min-max rescaling. Every metric is computed per
//! image and averaged over the dataset.

mod emeasure;
mod report;
mod smeasure;
mod wfm;

pub use emeasure::{e_measure_curve, e_measure_max};
pub use report::{evaluate_dataset, evaluate_pair, MetricsReport, MetricsRow, CSV_HEADER};
pub use smeasure::{s_measure, S_ALPHA};
pub use wfm::{f_beta_weighted, matlab_gaussian_kernel};

use crate::autograd::resize_bilinear_plane;
use crate::bdm::BinaryMask;
use crate::{Error, Result};

/// Machine epsilon of `f64`, used as the small stabiliser in every ratio.
pub const EPS: f64 = f64::EPSILON;

/// Default binarization threshold for Dice and IoU.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A predicted foreground probability map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PredictionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("{} values for a {height}x{width} map", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("prediction value {v} is outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, values)
    }

    /// The mask as a map of zeros and ones.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self { height: mask.height(), width: mask.width(), values: mask.as_slice().iter().map(|&v| f64::from(v)).collect() }
    }

    /// An 8-bit grey image scaled by `1 / 255`.
    pub fn from_gray(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self { height: h as usize, width: w as usize, values: img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect() }
    }

    pub fn to_gray(&self) -> image::GrayImage {
        let data = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, data).expect("buffer matches dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    /// Bilinear resampling to `height x width`; a no-op when sizes match.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let values = resize_bilinear_plane(&self.values, self.height, self.width, height, width, false);
        Self { height, width, values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        Self { values, ..self.clone() }
    }
}

fn check_dims(pred: (usize, usize), gt: &BinaryMask) -> Result<()> {
    if pred != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.0,
            pred.1,
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// 1 where the prediction is at least `threshold`.
pub fn binarize(pred: &PredictionMap, threshold: f64) -> BinaryMask {
    let data = pred.values.iter().map(|&v| u8::from(v >= threshold)).collect();
    BinaryMask::new(pred.height, pred.width, data).expect("dimensions come from a valid map")
}

/// `(|P and G|, |P|, |G|)`.
fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    check_dims((pred.height(), pred.width()), gt)?;
    let inter = pred.as_slice().iter().zip(gt.as_slice()).filter(|(&p, &g)| p == 1 && g == 1).count();
    Ok((inter, pred.count_ones(), gt.count_ones()))
}

/// `2 |P and G| / (|P| + |G|)`; 1 when both are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (i, p, g) = overlap(pred, gt)?;
    Ok(if p + g == 0 { 1.0 } else { 2.0 * i as f64 / (p + g) as f64 })
}

/// `|P and G| / |P or G|`; 1 when both are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (i, p, g) = overlap(pred, gt)?;
    let union = p + g - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Mean absolute difference between the prediction and the mask.
pub fn mae(pred: &PredictionMap, gt: &BinaryMask) -> Result<f64> {
    check_dims((pred.height, pred.width), gt)?;
    let sum: f64 = pred.values.iter().zip(gt.as_slice()).map(|(&p, &g)| (p - f64::from(g)).abs()).sum();
    Ok(sum / pred.values.len() as f64)
}
