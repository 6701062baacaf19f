//! Independent transcriptions of the structural metrics over plain 2-D
//! grids, plus the random instances they are compared on.

use bdgnet::bdm::BinaryMask;
use bdgnet::metrics::PredictionMap;
use rand::Rng;

type Grid = Vec<Vec<f64>>;

fn grid_of(pred: &PredictionMap) -> Grid {
    (0..pred.height()).map(|r| (0..pred.width()).map(|c| pred.get(r, c)).collect()).collect()
}

fn gt_grid(gt: &BinaryMask) -> Grid {
    (0..gt.height()).map(|r| (0..gt.width()).map(|c| if gt.get(r, c) { 1.0 } else { 0.0 }).collect()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn oracle_wfm(pred: &PredictionMap, gt: &BinaryMask) -> f64 {
    let (p, g) = (grid_of(pred), gt_grid(gt));
    let (h, w) = (g.len(), g[0].len());
    let fg: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| g[r][c] == 1.0).collect();
    if fg.is_empty() {
        return 0.0;
    }
    // nearest foreground pixel by brute force; ties to the first in row-major order
    let nearest = |r: usize, c: usize| -> ((usize, usize), f64) {
        let mut best = (fg[0], f64::INFINITY);
        for &(fr, fc) in &fg {
            let d = ((fr as f64 - r as f64).powi(2) + (fc as f64 - c as f64).powi(2)).sqrt();
            if d < best.1 {
                best = ((fr, fc), d);
            }
        }
        best
    };
    let e: Grid = (0..h).map(|r| (0..w).map(|c| (p[r][c] - g[r][c]).abs()).collect()).collect();
    let mut et = e.clone();
    let mut dst = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 0.0 {
                let ((nr, nc), d) = nearest(r, c);
                et[r][c] = e[nr][nc];
                dst[r][c] = d;
            }
        }
    }
    // 7x7 Gaussian, sigma 5, MATLAB style
    let mut k = [[0.0f64; 7]; 7];
    let mut kmax = 0.0f64;
    for (y, row) in k.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 3.0, x as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / 50.0).exp();
            kmax = kmax.max(*v);
        }
    }
    let mut ksum = 0.0;
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            if *v < f64::EPSILON * kmax {
                *v = 0.0;
            }
            ksum += *v;
        }
    }
    // zero-padded convolution through an explicit padded copy
    let mut padded = vec![vec![0.0; w + 6]; h + 6];
    for r in 0..h {
        for c in 0..w {
            padded[r + 3][c + 3] = et[r][c];
        }
    }
    let mut ea = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for y in 0..7 {
                for x in 0..7 {
                    s += k[6 - y][6 - x] / ksum * padded[r + y][c + x];
                }
            }
            ea[r][c] = s;
        }
    }
    let (mut tpw, mut fpw, mut fg_ew) = (0.0, 0.0, Vec::new());
    let gsum: f64 = g.iter().flatten().sum();
    for r in 0..h {
        for c in 0..w {
            let min_e = if g[r][c] == 1.0 && ea[r][c] < e[r][c] { ea[r][c] } else { e[r][c] };
            let b = if g[r][c] == 0.0 { 2.0 - ((0.5f64).ln() / 5.0 * dst[r][c]).exp() } else { 1.0 };
            let ew = min_e * b;
            if g[r][c] == 1.0 {
                fg_ew.push(ew);
            } else {
                fpw += ew;
            }
        }
    }
    tpw += gsum - fg_ew.iter().sum::<f64>();
    let rec = 1.0 - mean(&fg_ew);
    let prec = tpw / (tpw + fpw + f64::EPSILON);
    2.0 * rec * prec / (rec + prec + f64::EPSILON)
}

fn oracle_ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn oracle_s_object(v: &[f64]) -> f64 {
    let x = mean(v);
    let sd = if v.len() > 1 { (v.iter().map(|a| (a - x).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt() } else { 0.0 };
    2.0 * x / (x * x + 1.0 + sd + f64::EPSILON)
}

pub fn oracle_sm(pred: &PredictionMap, gt: &BinaryMask) -> f64 {
    let (p, g) = (grid_of(pred), gt_grid(gt));
    let (h, w) = (g.len(), g[0].len());
    let flat_p: Vec<f64> = p.iter().flatten().copied().collect();
    let flat_g: Vec<f64> = g.iter().flatten().copied().collect();
    let y = mean(&flat_g);
    if y == 0.0 {
        return 1.0 - mean(&flat_p);
    }
    if y == 1.0 {
        return mean(&flat_p);
    }
    let fg: Vec<f64> = flat_p.iter().zip(&flat_g).filter(|(_, &q)| q == 1.0).map(|(&a, _)| a).collect();
    let bg: Vec<f64> = flat_p.iter().zip(&flat_g).filter(|(_, &q)| q == 0.0).map(|(&a, _)| 1.0 - a).collect();
    let object = y * oracle_s_object(&fg) + (1.0 - y) * oracle_s_object(&bg);
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                rows.push(r as f64);
                cols.push(c as f64);
            }
        }
    }
    let cx = mean(&cols).round_ties_even() as usize + 1;
    let cy = mean(&rows).round_ties_even() as usize + 1;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut bp = Vec::new();
        let mut bg = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                bp.push(p[r][c]);
                bg.push(g[r][c]);
            }
        }
        oracle_ssim(&bp, &bg)
    };
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = (cy * (w - cx)) as f64 / area;
    let w3 = ((h - cy) * cx) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let region = w1 * block(0, cy, 0, cx) + w2 * block(0, cy, cx, w) + w3 * block(cy, h, 0, cx) + w4 * block(cy, h, cx, w);
    (0.5 * object + 0.5 * region).max(0.0)
}

pub fn oracle_em(pred: &PredictionMap, gt: &BinaryMask) -> f64 {
    let (p, g) = (grid_of(pred), gt_grid(gt));
    let flat_p: Vec<f64> = p.iter().flatten().copied().collect();
    let flat_g: Vec<f64> = g.iter().flatten().copied().collect();
    let n = flat_g.len() as f64;
    let gt_mean = mean(&flat_g);
    let mut best = 0.0f64;
    for t in 0..256 {
        let th = t as f64 / 255.0;
        let bin: Vec<f64> = flat_p.iter().map(|&v| if v >= th { 1.0 } else { 0.0 }).collect();
        let score: Vec<f64> = if gt_mean == 0.0 {
            bin.iter().map(|b| 1.0 - b).collect()
        } else if gt_mean == 1.0 {
            bin.clone()
        } else {
            let pm = mean(&bin);
            bin.iter()
                .zip(&flat_g)
                .map(|(b, q)| {
                    let (a, c) = (b - pm, q - gt_mean);
                    let phi = 2.0 * a * c / (a * a + c * c + f64::EPSILON);
                    (1.0 + phi).powi(2) / 4.0
                })
                .collect()
        };
        best = best.max(score.iter().sum::<f64>() / n);
    }
    best
}

pub fn random_case(seed: u64, h: usize, w: usize) -> (PredictionMap, BinaryMask) {
    let mut r = super::rng(seed);
    // one or two random rectangles plus a little salt noise
    let mut gt = BinaryMask::zeros(h, w);
    for _ in 0..r.random_range(1..=2) {
        let (r0, c0) = (r.random_range(0..h - 2), r.random_range(0..w - 2));
        let (r1, c1) = (r.random_range(r0 + 1..h), r.random_range(c0 + 1..w));
        for y in r0..=r1 {
            for x in c0..=c1 {
                gt.set(y, x, true);
            }
        }
    }
    for _ in 0..3 {
        let (y, x) = (r.random_range(0..h), r.random_range(0..w));
        gt.set(y, x, !gt.get(y, x));
    }
    let quantize = seed.is_multiple_of(3);
    let pred = PredictionMap::from_fn(h, w, |y, x| {
        let base = if gt.get(y, x) { 0.7 } else { 0.2 };
        let v: f64 = (base + r.random_range(-0.35..0.35f64)).clamp(0.0, 1.0);
        if quantize {
            (v * 255.0).round() / 255.0
        } else {
            v
        }
    })
    .unwrap();
    (pred, gt)
}
