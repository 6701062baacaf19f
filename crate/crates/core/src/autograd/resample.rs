use super::{Element, Graph, Shape, Tensor, Var};

/// Source taps of one output coordinate along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(src: usize, dst: usize, align_corners: bool) -> Vec<Tap> {
    (0..dst)
        .map(|d| {
            let pos = if align_corners {
                if dst > 1 {
                    d as f64 * (src - 1) as f64 / (dst - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0)
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let w1 = pos - i0 as f64;
            Tap { i0, i1, w0: 1.0 - w1, w1 }
        })
        .collect()
}

/// Bilinear resampling of one `sh x sw` plane to `dh x dw`.
pub fn resize_bilinear_plane<T: Element>(src: &[T], sh: usize, sw: usize, dh: usize, dw: usize, align_corners: bool) -> Vec<T> {
    assert_eq!(src.len(), sh * sw);
    let (ty, tx) = (taps(sh, dh, align_corners), taps(sw, dw, align_corners));
    let mut out = Vec::with_capacity(dh * dw);
    for y in &ty {
        let (r0, r1) = (&src[y.i0 * sw..(y.i0 + 1) * sw], &src[y.i1 * sw..(y.i1 + 1) * sw]);
        let (wy0, wy1) = (T::of(y.w0), T::of(y.w1));
        for x in &tx {
            let (wx0, wx1) = (T::of(x.w0), T::of(x.w1));
            let top = r0[x.i0] * wx0 + r0[x.i1] * wx1;
            let bottom = r1[x.i0] * wx0 + r1[x.i1] * wx1;
            out.push(top * wy0 + bottom * wy1);
        }
    }
    out
}

fn resize_bilinear_plane_backward<T: Element>(
    g: &[T],
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    align_corners: bool,
    dst: &mut [T],
) {
    let (ty, tx) = (taps(sh, dh, align_corners), taps(sw, dw, align_corners));
    for (oy, y) in ty.iter().enumerate() {
        let (wy0, wy1) = (T::of(y.w0), T::of(y.w1));
        for (ox, x) in tx.iter().enumerate() {
            let v = g[oy * dw + ox];
            let (wx0, wx1) = (T::of(x.w0), T::of(x.w1));
            dst[y.i0 * sw + x.i0] += v * wy0 * wx0;
            dst[y.i0 * sw + x.i1] += v * wy0 * wx1;
            dst[y.i1 * sw + x.i0] += v * wy1 * wx0;
            dst[y.i1 * sw + x.i1] += v * wy1 * wx1;
        }
    }
}

/// 2x2 average pooling with stride 2 of an even-sized plane.
pub fn avg_pool2_plane<T: Element>(src: &[T], h: usize, w: usize) -> Vec<T> {
    assert!(h.is_multiple_of(2) && w.is_multiple_of(2), "average pooling needs even extents, got {h}x{w}");
    let quarter = T::of(0.25);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let (a, b) = (2 * y * w + 2 * x, (2 * y + 1) * w + 2 * x);
            out.push((src[a] + src[a + 1] + src[b] + src[b + 1]) * quarter);
        }
    }
    out
}

fn per_plane<T: Element>(x: &Tensor<T>, out: Shape, f: impl Fn(&[T]) -> Vec<T>) -> Tensor<T> {
    let s = x.shape();
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            data.extend(f(x.plane(n, c)));
        }
    }
    Tensor::from_vec(out, data)
}

impl<T: Element> Graph<T> {
    /// Bilinear resize of every plane. Same-size requests return `x` unchanged.
    ///
    /// FLOPs: four multiply-adds (eight FLOPs) per output element.
    pub fn resize_bilinear(&self, x: Var, h: usize, w: usize, align_corners: bool) -> Var {
        let s = self.shape(x);
        if (s.h, s.w) == (h, w) {
            return x;
        }
        let out = Shape::new(s.n, s.c, h, w);
        self.record(
            &[x],
            out,
            8 * out.numel() as u64,
            |v| per_plane(v[0], out, |p| resize_bilinear_plane(p, s.h, s.w, h, w, align_corners)),
            Box::new(move |args| {
                let mut d = vec![T::zero(); s.numel()];
                for (i, chunk) in d.chunks_mut(s.plane()).enumerate() {
                    let g = &args.grad.as_slice()[i * out.plane()..(i + 1) * out.plane()];
                    resize_bilinear_plane_backward(g, s.h, s.w, h, w, align_corners, chunk);
                }
                vec![Some(Tensor::from_vec(s, d))]
            }),
        )
    }

    /// 2x2 average pooling, stride 2. FLOPs: four per output element.
    pub fn avg_pool2(&self, x: Var) -> Var {
        let s = self.shape(x);
        assert!(s.h.is_multiple_of(2) && s.w.is_multiple_of(2), "average pooling needs even extents, got {s}");
        let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        self.record(
            &[x],
            out,
            4 * out.numel() as u64,
            |v| per_plane(v[0], out, |p| avg_pool2_plane(p, s.h, s.w)),
            Box::new(move |args| {
                let quarter = T::of(0.25);
                let g = args.grad.as_slice();
                let mut d = vec![T::zero(); s.numel()];
                for i in 0..s.numel() {
                    let (plane, rem) = (i / s.plane(), i % s.plane());
                    let (y, x) = (rem / s.w, rem % s.w);
                    d[i] = g[plane * out.plane() + (y / 2) * out.w + x / 2] * quarter;
                }
                vec![Some(Tensor::from_vec(s, d))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_matches_half_pixel_convention() {
        // 2 -> 4: sample positions -0.25 (clamped), 0.25, 0.75, 1.25
        let out = resize_bilinear_plane(&[0.0f64, 1.0], 1, 2, 1, 4, false);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
        let aligned = resize_bilinear_plane(&[0.0f64, 3.0], 1, 2, 1, 4, true);
        assert_eq!(aligned, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let src: Vec<f64> = (0..16).map(f64::from).collect();
        let out = resize_bilinear_plane(&src, 4, 4, 2, 2, false);
        assert_eq!(out, avg_pool2_plane(&src, 4, 4));
    }

    #[test]
    fn constant_planes_stay_constant() {
        let out = resize_bilinear_plane(&[1.0f64; 11 * 11], 11, 11, 352, 352, false);
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn adjoint_identity() {
        // <resize(x), y> == <x, resize^T(y)>
        let (sh, sw, dh, dw) = (3, 5, 7, 4);
        let x: Vec<f64> = (0..sh * sw).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..dh * dw).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let rx = resize_bilinear_plane(&x, sh, sw, dh, dw, false);
        let mut ry = vec![0.0; sh * sw];
        resize_bilinear_plane_backward(&y, sh, sw, dh, dw, false, &mut ry);
        let lhs: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ry).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
