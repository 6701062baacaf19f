//! Training objective: thresholded boundary-map regression plus weighted
//! binary cross-entropy and weighted IoU on the segmentation output.
//!
//! Every loss is a graph op returning a `(1, 1, 1, 1)` scalar. Ground truth
//! and pixel weights are plain tensors and receive no gradient.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Element, Graph, Shape, Tensor, Var};
use crate::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Squared boundary-map residuals at or below this value are ignored.
    pub lambda: f64,
    /// Side of the square averaging window of the pixel weight map; odd.
    pub weight_kernel: usize,
    /// Gain of the pixel weight map.
    pub weight_gain: f64,
    /// Use the unreduced forms: the boundary loss is a sum over pixels and the
    /// weighted BCE is a plain weighted sum, both over the whole batch.
    pub literal_forms: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.01, weight_kernel: 31, weight_gain: 5.0, literal_forms: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if self.weight_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("weight_kernel must be odd, got {}", self.weight_kernel)));
        }
        if !self.weight_gain.is_finite() {
            return Err(Error::Config("weight_gain must be finite".into()));
        }
        Ok(())
    }
}

/// Box average over a `k x k` window centred on each pixel, counting only
/// the in-image pixels of the window.
pub fn box_mean_plane(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let r = k / 2;
    // Summed-area table with a zero border row and column.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Pixel weights `1 + gain * |boxmean_k(gt) - gt|`, emphasising pixels near
/// object edges. `gt` is `(N, 1, H, W)` with values in `{0, 1}`.
pub fn weight_map<T: Element>(gt: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    let s = gt.shape();
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane: Vec<f64> = gt.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let mean = box_mean_plane(&plane, s.h, s.w, cfg.weight_kernel);
            data.extend(mean.iter().zip(&plane).map(|(m, g)| T::of(1.0 + cfg.weight_gain * (m - g).abs())));
        }
    }
    Tensor::from_vec(s, data)
}

fn check_same(what: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: shapes {a} and {b} differ")));
    }
    Ok(())
}

/// Thresholded squared error between predicted and ideal boundary maps:
/// `(b - b_hat)^2 * [(b - b_hat)^2 > lambda]`, averaged over all pixels, or
/// summed with `literal_forms`. Ignored pixels get no gradient.
pub fn l_bdm<T: Element>(g: &Graph<T>, pred: Var, ideal: &Tensor<T>, cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(pred);
    check_same("boundary loss", shape, ideal.shape())?;
    let lambda = T::of(cfg.lambda);
    let keep: Vec<bool> = {
        let p = g.value(pred);
        p.as_slice().iter().zip(ideal.as_slice()).map(|(&a, &b)| (a - b) * (a - b) > lambda).collect()
    };
    g.note_branches(keep.iter().copied());
    let mask = Tensor::from_vec(shape, keep.iter().map(|&k| if k { T::one() } else { T::zero() }).collect());
    let residual = g.sub(pred, g.constant(ideal.clone()));
    let kept = g.mul(g.square(residual), g.constant(mask));
    Ok(if cfg.literal_forms { g.sum_all(kept) } else { g.mean_all(kept) })
}

/// Per-image sums of `w` over channels and plane.
fn item_sums<T: Element>(w: &Tensor<T>) -> Vec<f64> {
    (0..w.shape().n).map(|n| w.item(n).iter().map(|v| v.as_f64()).sum()).collect()
}

/// Per-element scale of the weighted BCE: `1 / (N * sum(w_n))` normalized,
/// `1` literal.
fn bce_scales<T: Element>(w: &Tensor<T>, literal: bool) -> Vec<f64> {
    let n = w.shape().n;
    item_sums(w)
        .into_iter()
        .map(|s| {
            if literal {
                1.0
            } else if s > 0.0 {
                1.0 / (n as f64 * s)
            } else {
                0.0
            }
        })
        .collect()
}

/// Weighted binary cross-entropy of probabilities `s` against `gt`:
/// `-sum(w * [g ln s + (1 - g) ln(1 - s)]) / sum(w)` per image, averaged over
/// the batch (a plain weighted sum with `literal`). Probabilities are clamped
/// into `[1e-7, 1 - 1e-7]`.
pub fn l_wbce<T: Element>(g: &Graph<T>, prob: Var, gt: &Tensor<T>, w: &Tensor<T>, literal: bool) -> Result<Var> {
    let shape = g.shape(prob);
    check_same("weighted BCE", shape, gt.shape())?;
    check_same("weighted BCE", shape, w.shape())?;
    let (lo, hi) = (T::of(PROB_EPS), T::of(1.0 - PROB_EPS));
    if !g.is_dry() {
        let p = g.value(prob);
        g.note_branches(p.as_slice().iter().flat_map(|&v| [v < lo, v > hi]));
    }
    let scales = bce_scales(w, literal);
    let per = shape.numel() / shape.n.max(1);
    let (gt_f, w_f) = (gt.clone(), w.clone());
    let (gt_b, w_b, scales_b) = (gt.clone(), w.clone(), scales.clone());
    Ok(g.record(
        &[prob],
        Shape::scalar(),
        6 * shape.numel() as u64,
        move |v| {
            let (s, gt, w) = (v[0].as_slice(), gt_f.as_slice(), w_f.as_slice());
            let mut total = T::zero();
            for (n, &scale) in scales.iter().enumerate() {
                let mut acc = T::zero();
                for i in n * per..(n + 1) * per {
                    let p = s[i].max(lo).min(hi);
                    acc += w[i] * (gt[i] * p.ln() + (T::one() - gt[i]) * (T::one() - p).ln());
                }
                total += -acc * T::of(scale);
            }
            Tensor::scalar(total)
        },
        Box::new(move |args| {
            let up = args.grad.as_slice()[0];
            let (s, gt, w) = (args.inputs[0].as_slice(), gt_b.as_slice(), w_b.as_slice());
            let d = (0..s.len())
                .map(|i| {
                    if s[i] < lo || s[i] > hi {
                        return T::zero();
                    }
                    let (p, q) = (s[i], gt[i]);
                    -up * T::of(scales_b[i / per]) * w[i] * (q / p - (T::one() - q) / (T::one() - p))
                })
                .collect();
            vec![Some(Tensor::from_vec(shape, d))]
        }),
    ))
}

/// [`l_wbce`] evaluated from logits with the stable form
/// `max(x, 0) - x g + ln(1 + exp(-|x|))`, without clamping.
pub fn l_wbce_logits<T: Element>(g: &Graph<T>, logits: Var, gt: &Tensor<T>, w: &Tensor<T>, literal: bool) -> Result<Var> {
    let shape = g.shape(logits);
    check_same("weighted BCE", shape, gt.shape())?;
    check_same("weighted BCE", shape, w.shape())?;
    let scales = bce_scales(w, literal);
    let per = shape.numel() / shape.n.max(1);
    let (gt_f, w_f) = (gt.clone(), w.clone());
    let (gt_b, w_b, scales_b) = (gt.clone(), w.clone(), scales.clone());
    Ok(g.record(
        &[logits],
        Shape::scalar(),
        6 * shape.numel() as u64,
        move |v| {
            let (x, gt, w) = (v[0].as_slice(), gt_f.as_slice(), w_f.as_slice());
            let mut total = T::zero();
            for (n, &scale) in scales.iter().enumerate() {
                let mut acc = T::zero();
                for i in n * per..(n + 1) * per {
                    let bce = x[i].max(T::zero()) - x[i] * gt[i] + (-x[i].abs()).exp().ln_1p();
                    acc += w[i] * bce;
                }
                total += acc * T::of(scale);
            }
            Tensor::scalar(total)
        },
        Box::new(move |args| {
            let up = args.grad.as_slice()[0];
            let (x, gt, w) = (args.inputs[0].as_slice(), gt_b.as_slice(), w_b.as_slice());
            let d = (0..x.len()).map(|i| up * T::of(scales_b[i / per]) * w[i] * (sigmoid(x[i]) - gt[i])).collect();
            vec![Some(Tensor::from_vec(shape, d))]
        }),
    ))
}

/// Weighted IoU loss `1 - sum(w g s) / sum(w (g + s - g s))` per image,
/// averaged over the batch. An image whose denominator is zero contributes 0.
pub fn l_wiou<T: Element>(g: &Graph<T>, prob: Var, gt: &Tensor<T>, w: &Tensor<T>) -> Result<Var> {
    let shape = g.shape(prob);
    check_same("weighted IoU", shape, gt.shape())?;
    check_same("weighted IoU", shape, w.shape())?;
    let n = shape.n;
    let per = shape.numel() / n.max(1);
    let inv_n = T::of(1.0 / n as f64);
    let terms = move |s: &[T], gt: &[T], w: &[T], item: usize| -> (T, T) {
        let mut inter = T::zero();
        let mut union = T::zero();
        for i in item * per..(item + 1) * per {
            inter += w[i] * gt[i] * s[i];
            union += w[i] * (gt[i] + s[i] - gt[i] * s[i]);
        }
        (inter, union)
    };
    let (gt_f, w_f) = (gt.clone(), w.clone());
    let (gt_b, w_b) = (gt.clone(), w.clone());
    Ok(g.record(
        &[prob],
        Shape::scalar(),
        8 * shape.numel() as u64,
        move |v| {
            let mut total = T::zero();
            for item in 0..n {
                let (inter, union) = terms(v[0].as_slice(), gt_f.as_slice(), w_f.as_slice(), item);
                if union != T::zero() {
                    total += T::one() - inter / union;
                }
            }
            Tensor::scalar(total * inv_n)
        },
        Box::new(move |args| {
            let up = args.grad.as_slice()[0] * inv_n;
            let (s, gt, w) = (args.inputs[0].as_slice(), gt_b.as_slice(), w_b.as_slice());
            let mut d = vec![T::zero(); s.len()];
            for item in 0..n {
                let (inter, union) = terms(s, gt, w, item);
                if union == T::zero() {
                    continue;
                }
                let u2 = union * union;
                for i in item * per..(item + 1) * per {
                    // d(I/U)/ds = (w g U - I w (1 - g)) / U^2
                    let dr = (w[i] * gt[i] * union - inter * w[i] * (T::one() - gt[i])) / u2;
                    d[i] = -up * dr;
                }
            }
            vec![Some(Tensor::from_vec(shape, d))]
        }),
    ))
}

/// The three loss terms and their sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Absent when the network has no boundary module.
    pub bdm: Option<Var>,
    pub wbce: Var,
    pub wiou: Var,
}

/// Scalar values of [`LossTerms`]. `total` is the sum of the components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub bdm: f64,
    pub wbce: f64,
    pub wiou: f64,
}

impl LossTerms {
    pub fn values<T: Element>(&self, g: &Graph<T>) -> LossValues {
        let get = |v: Var| g.value(v).as_slice()[0].as_f64();
        let (bdm, wbce, wiou) = (self.bdm.map_or(0.0, get), get(self.wbce), get(self.wiou));
        LossValues { total: bdm + wbce + wiou, bdm, wbce, wiou }
    }
}

/// Total loss `L_bdm + L_wbce + L_wiou` for segmentation `logits` and an
/// optional predicted boundary map, with pixel weights from `gt`.
pub fn l_total<T: Element>(
    g: &Graph<T>,
    logits: Var,
    pred_bdm: Option<Var>,
    gt: &Tensor<T>,
    ideal_bdm: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let w = weight_map(gt, cfg);
    let bdm = pred_bdm.map(|p| l_bdm(g, p, ideal_bdm, cfg)).transpose()?;
    let wbce = l_wbce_logits(g, logits, gt, &w, cfg.literal_forms)?;
    let wiou = l_wiou(g, g.sigmoid(logits), gt, &w)?;
    let seg = g.add(wbce, wiou);
    let total = match bdm {
        Some(b) => g.add(b, seg),
        None => seg,
    };
    Ok(LossTerms { total, bdm, wbce, wiou })
}
