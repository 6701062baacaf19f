use crate::bdm::BinaryMask;
use crate::Result;

use super::{check_dims, PredictionMap, EPS};

/// Number of binarization thresholds `t / 255`, `t = 0..=255`.
pub const THRESHOLDS: usize = 256;

/// Largest `t` with `t / 255 <= p`, or `None` when `p < 0`.
fn top_threshold(p: f64) -> Option<usize> {
    let mut k = (p * 255.0).floor().clamp(-1.0, 255.0) as isize;
    while k < 255 && (k + 1) as f64 / 255.0 <= p {
        k += 1;
    }
    while k >= 0 && k as f64 / 255.0 > p {
        k -= 1;
    }
    usize::try_from(k).ok()
}

/// Enhanced-alignment score at each of the 256 thresholds.
///
/// A pixel is predicted foreground at threshold `t` when its value is at
/// least `t / 255`. The alignment term of each pixel depends only on its
/// (prediction, ground truth) pair, so the score is assembled from the four
/// pair counts. The per-pixel scores are averaged over all pixels. With an
/// all-background ground truth the per-pixel score is `1 - p_bin`; with an
/// all-foreground one it is `p_bin`.
pub fn e_measure_curve(pred: &PredictionMap, gt: &BinaryMask) -> Result<Vec<f64>> {
    check_dims((pred.height(), pred.width()), gt)?;
    let size = gt.as_slice().len();
    let gt_fg = gt.count_ones();
    // Histograms of the top threshold reached, split by ground truth.
    let (mut hist_fg, mut hist_bg) = ([0usize; THRESHOLDS], [0usize; THRESHOLDS]);
    for (&p, &g) in pred.values().iter().zip(gt.as_slice()) {
        if let Some(k) = top_threshold(p) {
            if g == 1 {
                hist_fg[k] += 1;
            } else {
                hist_bg[k] += 1;
            }
        }
    }
    let n = size as f64;
    let mean_gt = gt_fg as f64 / n;
    let (mut fg_fg, mut fg_bg) = (0usize, 0usize);
    let mut curve = vec![0.0; THRESHOLDS];
    for t in (0..THRESHOLDS).rev() {
        // Pixels at or above threshold t.
        fg_fg += hist_fg[t];
        fg_bg += hist_bg[t];
        let pred_fg = fg_fg + fg_bg;
        let sum = if gt_fg == 0 {
            (size - pred_fg) as f64
        } else if gt_fg == size {
            pred_fg as f64
        } else {
            let mean_pred = pred_fg as f64 / n;
            let bg_fg = gt_fg - fg_fg;
            let bg_bg = size - pred_fg - bg_fg;
            let (pf, pb) = (1.0 - mean_pred, -mean_pred);
            let (gf, gb) = (1.0 - mean_gt, -mean_gt);
            let enhanced = |a: f64, b: f64| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0
            };
            enhanced(pf, gf) * fg_fg as f64
                + enhanced(pf, gb) * fg_bg as f64
                + enhanced(pb, gf) * bg_fg as f64
                + enhanced(pb, gb) * bg_bg as f64
        };
        curve[t] = sum / n;
    }
    Ok(curve)
}

/// Maximum of [`e_measure_curve`] over the thresholds.
pub fn e_measure_max(pred: &PredictionMap, gt: &BinaryMask) -> Result<f64> {
    Ok(e_measure_curve(pred, gt)?.into_iter().fold(0.0, f64::max))
}
