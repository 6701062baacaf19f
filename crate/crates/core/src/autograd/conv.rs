use super::{gemm, Element, Graph, Layout, Shape, Tensor, Var};

/// Stride, zero padding `(rows, cols)` and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: (usize, usize),
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1 with "same" padding for a `kh x kw` kernel at the given dilation.
    pub fn same(kh: usize, kw: usize, dilation: usize) -> Self {
        Self { stride: 1, pad: (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2), dilation }
    }

    pub fn strided(k: usize, stride: usize) -> Self {
        Self { stride, pad: ((k - 1) / 2, (k - 1) / 2), dilation: 1 }
    }

    pub fn output_extent(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let eh = self.dilation * (kh - 1) + 1;
        let ew = self.dilation * (kw - 1) + 1;
        let (ph, pw) = (h + 2 * self.pad.0, w + 2 * self.pad.1);
        if ph < eh || pw < ew {
            return None;
        }
        Some(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1, unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.pad == (0, 0)
    }

    /// Input coordinate feeding output position `o` through kernel tap `k`.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k * dil) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let (p, s, d) = (self.p(), self.spec.stride, self.spec.dilation);
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, ki, s, d, self.spec.pad.0, self.h) {
                            None => out.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kj, s, d, self.spec.pad.1, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let (p, s, d) = (self.p(), self.spec.stride, self.spec.dilation);
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ki, s, d, self.spec.pad.0, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = Self::src(ox, kj, s, d, self.spec.pad.1, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Graph<T> {
    /// Cross-correlation of `x: (N, C, H, W)` with `weight: (O, C, kh, kw)` plus
    /// an optional `bias: (1, O, 1, 1)`.
    ///
    /// FLOPs: `2 * C * kh * kw` per output element, plus one per output element for the bias.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        assert_eq!(xs.c, ws.c, "conv input has {} channels, kernel expects {}", xs.c, ws.c);
        let (oh, ow) = spec
            .output_extent(xs.h, xs.w, ws.h, ws.w)
            .unwrap_or_else(|| panic!("kernel {ws} does not fit input {xs} with {spec:?}"));
        if let Some(b) = bias {
            assert_eq!(self.shape(b), Shape::new(1, ws.n, 1, 1));
        }
        let out = Shape::new(xs.n, ws.n, oh, ow);
        let geo = Geometry { c: xs.c, h: xs.h, w: xs.w, kh: ws.h, kw: ws.w, oh, ow, spec };
        let mut flops = 2 * (geo.k() * out.numel()) as u64;
        if bias.is_some() {
            flops += out.numel() as u64;
        }
        let inputs: Vec<Var> = std::iter::once(x).chain(std::iter::once(weight)).chain(bias).collect();
        self.record(
            &inputs,
            out,
            flops,
            |v| conv_forward(&geo, v[0], v[1], v.get(2).copied(), out),
            Box::new(move |args| conv_backward(&geo, args.grad, args.inputs, args.needs)),
        )
    }
}

fn conv_forward<T: Element>(geo: &Geometry, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, out: Shape) -> Tensor<T> {
    let (k, p, o) = (geo.k(), geo.p(), out.c);
    let mut y = vec![T::zero(); out.numel()];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..out.n {
        let xn = x.item(n);
        let cm: &[T] = if geo.is_pointwise() {
            xn
        } else {
            geo.im2col(xn, &mut cols);
            &cols
        };
        let yn = &mut y[n * o * p..(n + 1) * o * p];
        gemm(w.as_slice(), Layout::row_major(o, k), cm, Layout::row_major(k, p), T::zero(), yn, Layout::row_major(o, p));
        if let Some(b) = b {
            for (ch, bias) in b.as_slice().iter().enumerate() {
                for v in &mut yn[ch * p..(ch + 1) * p] {
                    *v += *bias;
                }
            }
        }
    }
    Tensor::from_vec(out, y)
}

fn conv_backward<T: Element>(geo: &Geometry, gy: &Tensor<T>, inputs: &[&Tensor<T>], needs: &[bool]) -> Vec<Option<Tensor<T>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let (k, p, o) = (geo.k(), geo.p(), w.shape().n);
    let batch = x.shape().n;
    let mut dx = needs[0].then(|| vec![T::zero(); x.shape().numel()]);
    let mut dw = needs[1].then(|| vec![T::zero(); w.shape().numel()]);
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if geo.is_pointwise() || dx.is_none() { Vec::new() } else { vec![T::zero(); k * p] };
    let gy_layout = Layout::row_major(o, p);
    let w_layout = Layout::row_major(o, k);
    for n in 0..batch {
        let gyn = &gy.as_slice()[n * o * p..(n + 1) * o * p];
        if let Some(dw) = dw.as_mut() {
            let xn = x.item(n);
            let cm: &[T] = if geo.is_pointwise() {
                xn
            } else {
                geo.im2col(xn, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            gemm(gyn, gy_layout, cm, Layout::row_major(k, p).transposed(), T::one(), dw, w_layout);
        }
        if let Some(dx) = dx.as_mut() {
            let per = geo.c * geo.h * geo.w;
            let dxn = &mut dx[n * per..(n + 1) * per];
            if geo.is_pointwise() {
                gemm(w.as_slice(), w_layout.transposed(), gyn, gy_layout, T::zero(), dxn, Layout::row_major(k, p));
            } else {
                gemm(w.as_slice(), w_layout.transposed(), gyn, gy_layout, T::zero(), &mut dcols, Layout::row_major(k, p));
                geo.col2im(&dcols, dxn);
            }
        }
    }
    let db = inputs.get(2).and_then(|b| {
        needs[2].then(|| {
            let mut d = vec![T::zero(); o];
            for n in 0..batch {
                for (ch, acc) in d.iter_mut().enumerate() {
                    let s = n * o * p + ch * p;
                    *acc += gy.as_slice()[s..s + p].iter().copied().sum();
                }
            }
            Tensor::from_vec(b.shape(), d)
        })
    });
    let mut out = vec![dx.map(|d| Tensor::from_vec(x.shape(), d)), dw.map(|d| Tensor::from_vec(w.shape(), d))];
    if inputs.len() == 3 {
        out.push(db);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (oh, ow) = spec.output_extent(xs.h, xs.w, ws.h, ws.w).unwrap();
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |[n, o, y, xo]| {
            let mut acc = 0.0;
            for c in 0..xs.c {
                for i in 0..ws.h {
                    for j in 0..ws.w {
                        let iy = (y * spec.stride + i * spec.dilation) as isize - spec.pad.0 as isize;
                        let ix = (xo * spec.stride + j * spec.dilation) as isize - spec.pad.1 as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += x.get([n, c, iy as usize, ix as usize]) * w.get([o, c, i, j]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn matches_naive_for_assorted_geometries() {
        let cases = [
            (ConvSpec::same(3, 3, 1), (3, 3)),
            (ConvSpec::same(1, 5, 1), (1, 5)),
            (ConvSpec::same(7, 1, 1), (7, 1)),
            (ConvSpec::same(3, 3, 3), (3, 3)),
            (ConvSpec::strided(3, 2), (3, 3)),
            (ConvSpec { stride: 1, pad: (0, 0), dilation: 1 }, (1, 1)),
        ];
        for (i, (spec, (kh, kw))) in cases.into_iter().enumerate() {
            let x = pseudo(Shape::new(2, 3, 9, 8), i as u64);
            let w = pseudo(Shape::new(4, 3, kh, kw), 100 + i as u64);
            let g = Graph::<f64>::new();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.conv2d(xv, wv, None, spec);
            assert!(g.value(y).max_abs_diff(&naive(&x, &w, spec)) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn flop_count_of_single_conv() {
        let g = Graph::<f32>::dry_run();
        let x = g.placeholder(Shape::new(1, 3, 32, 32), false);
        let w = g.placeholder(Shape::new(16, 3, 3, 3), false);
        let y = g.conv2d(x, w, None, ConvSpec::same(3, 3, 1));
        assert_eq!(g.shape(y), Shape::new(1, 16, 32, 32));
        assert_eq!(g.flops(), 884_736);
    }
}
