use crate::bdm::BinaryMask;
use crate::Result;

use super::{check_dims, PredictionMap, EPS};

/// Balance between the object-aware and region-aware terms.
pub const S_ALPHA: f64 = 0.5;

/// Structure measure `alpha * S_object + (1 - alpha) * S_region`, clamped at 0.
///
/// With an all-background ground truth the score is `1 - mean(pred)`; with an
/// all-foreground one it is `mean(pred)`.
pub fn s_measure(pred: &PredictionMap, gt: &BinaryMask) -> Result<f64> {
    check_dims((pred.height(), pred.width()), gt)?;
    let n = gt.as_slice().len() as f64;
    let fg = gt.count_ones() as f64 / n;
    let mean_pred = pred.values().iter().sum::<f64>() / n;
    if fg == 0.0 {
        return Ok(1.0 - mean_pred);
    }
    if fg == 1.0 {
        return Ok(mean_pred);
    }
    let score = S_ALPHA * object_score(pred, gt, fg) + (1.0 - S_ALPHA) * region_score(pred, gt);
    Ok(score.max(0.0))
}

/// Similarity of the values inside one region to a uniform 1.
fn s_object(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

fn object_score(pred: &PredictionMap, gt: &BinaryMask, fg: f64) -> f64 {
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (&p, &g) in pred.values().iter().zip(gt.as_slice()) {
        if g == 1 {
            inside.push(p);
        } else {
            outside.push(1.0 - p);
        }
    }
    fg * s_object(&inside) + (1.0 - fg) * s_object(&outside)
}

/// One-based centroid `(x, y)` of the foreground, rounded half to even.
fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            if gt.get(r, c) {
                sy += r as f64;
                sx += c as f64;
                n += 1.0;
            }
        }
    }
    ((sx / n).round_ties_even() as usize + 1, (sy / n).round_ties_even() as usize + 1)
}

/// SSIM-style similarity of a rectangular block; 0 for an empty block.
fn ssim(pred: &PredictionMap, gt: &BinaryMask, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let count = rows.len() * cols.len();
    if count == 0 {
        return 0.0;
    }
    let n = count as f64;
    let cells = || rows.clone().flat_map(|r| cols.clone().map(move |c| (r, c)));
    let mx = cells().map(|(r, c)| pred.get(r, c)).sum::<f64>() / n;
    let my = cells().map(|(r, c)| f64::from(u8::from(gt.get(r, c)))).sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (r, c) in cells() {
        let (dx, dy) = (pred.get(r, c) - mx, f64::from(u8::from(gt.get(r, c))) - my);
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    let denom = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / denom, vy / denom, cxy / denom);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pred: &PredictionMap, gt: &BinaryMask) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let (x, y) = centroid(gt);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = (y * (w - x)) as f64 / area;
    let w3 = ((h - y) * x) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    w1 * ssim(pred, gt, 0..y, 0..x)
        + w2 * ssim(pred, gt, 0..y, x..w)
        + w3 * ssim(pred, gt, y..h, 0..x)
        + w4 * ssim(pred, gt, y..h, x..w)
}
