use crate::bdm::{feature_transform, BinaryMask};
use crate::Result;

use super::{check_dims, PredictionMap, EPS};

/// Side of the Gaussian used to propagate foreground errors.
const KERNEL: usize = 7;
const KERNEL_SIGMA: f64 = 5.0;
/// `beta^2` of the F-measure.
const BETA2: f64 = 1.0;

/// Normalized `size x size` Gaussian with MATLAB's `fspecial` conventions:
/// entries below `EPS * max` are zeroed before normalizing.
pub fn matlab_gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - half, (i % size) as f64 - half);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let max = k.iter().copied().fold(0.0, f64::max);
    for v in &mut k {
        if *v < EPS * max {
            *v = 0.0;
        }
    }
    let sum: f64 = k.iter().sum();
    if sum != 0.0 {
        k.iter_mut().for_each(|v| *v /= sum);
    }
    k
}

/// Weighted F-measure.
///
/// Background errors are replaced by the error at their nearest foreground
/// pixel and smoothed with a 7x7 Gaussian (sigma 5, zero padding); at
/// foreground pixels the smaller of the raw and smoothed error is kept.
/// Background errors are then amplified by `2 - exp(ln(0.5) / 5 * d)` with
/// `d` the distance to the foreground, and weighted precision and recall are
/// combined with `beta^2 = 1`.
///
/// Returns `Ok(None)` when the ground truth has no foreground; the caller
/// reports 0 for such images.
pub fn f_beta_weighted(pred: &PredictionMap, gt: &BinaryMask) -> Result<Option<f64>> {
    check_dims((pred.height(), pred.width()), gt)?;
    let Some(ft) = feature_transform(gt) else { return Ok(None) };
    let (h, w) = (gt.height(), gt.width());
    let g = gt.as_slice();
    let err: Vec<f64> = pred.values().iter().zip(g).map(|(&p, &q)| (p - f64::from(q)).abs()).collect();
    let propagated: Vec<f64> = (0..h * w).map(|i| if g[i] == 1 { err[i] } else { err[ft.nearest[i]] }).collect();

    let kernel = matlab_gaussian_kernel(KERNEL, KERNEL_SIGMA);
    let r = (KERNEL / 2) as isize;
    let mut smoothed = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    let (sy, sx) = (y + ky, x + kx);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    // The kernel is symmetric, so correlation and convolution agree.
                    acc += kernel[((ky + r) as usize) * KERNEL + (kx + r) as usize] * propagated[sy as usize * w + sx as usize];
                }
            }
            smoothed[y as usize * w + x as usize] = acc;
        }
    }

    let (mut fg_err, mut bg_err, mut fg_count) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if g[i] == 1 {
            fg_err += if smoothed[i] < err[i] { smoothed[i] } else { err[i] };
            fg_count += 1;
        } else {
            let dist = (ft.sq_dist[i] as f64).sqrt();
            bg_err += err[i] * (2.0 - ((0.5f64).ln() / 5.0 * dist).exp());
        }
    }
    let tp = fg_count as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_count as f64;
    let precision = tp / (tp + bg_err + EPS);
    Ok(Some((1.0 + BETA2) * recall * precision / (recall + BETA2 * precision + EPS)))
}
