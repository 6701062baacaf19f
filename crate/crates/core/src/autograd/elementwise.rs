use super::{Element, Graph, Shape, Tensor, Var};

/// Shape of `a op b` under NCHW broadcasting: batch and channel axes broadcast
/// from 1, and a 1x1 plane broadcasts over any plane.
pub(crate) fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    let axis = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    let (h, w) = if (a.h, a.w) == (b.h, b.w) {
        (a.h, a.w)
    } else if a.plane() == 1 {
        (b.h, b.w)
    } else if b.plane() == 1 {
        (a.h, a.w)
    } else {
        return None;
    };
    Some(Shape::new(axis(a.n, b.n)?, axis(a.c, b.c)?, h, w))
}

/// Offset of the plane of `s` that broadcasts onto `(n, c)` of the output.
fn plane_base(s: Shape, n: usize, c: usize) -> usize {
    let n = if s.n == 1 { 0 } else { n };
    let c = if s.c == 1 { 0 } else { c };
    (n * s.c + c) * s.plane()
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_pair(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let p = out.plane();
    let (sa, sb) = (a.plane() == 1 && p != 1, b.plane() == 1 && p != 1);
    for n in 0..out.n {
        for c in 0..out.c {
            let (oa, ob, oo) = (plane_base(a, n, c), plane_base(b, n, c), (n * out.c + c) * p);
            for i in 0..p {
                f(oo + i, if sa { oa } else { oa + i }, if sb { ob } else { ob + i });
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl<T: Element> Graph<T> {
    fn binary(&self, a: Var, b: Var, op: BinOp) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb).unwrap_or_else(|| panic!("cannot broadcast {sa} with {sb}"));
        self.record(
            &[a, b],
            out,
            out.numel() as u64,
            |x| {
                let (xa, xb) = (x[0].as_slice(), x[1].as_slice());
                let mut data = vec![T::zero(); out.numel()];
                for_each_pair(out, sa, sb, |o, i, j| {
                    data[o] = match op {
                        BinOp::Add => xa[i] + xb[j],
                        BinOp::Sub => xa[i] - xb[j],
                        BinOp::Mul => xa[i] * xb[j],
                    }
                });
                Tensor::from_vec(out, data)
            },
            Box::new(move |args| {
                let g = args.grad.as_slice();
                let (xa, xb) = (args.inputs[0].as_slice(), args.inputs[1].as_slice());
                let mut ga = args.needs[0].then(|| vec![T::zero(); sa.numel()]);
                let mut gb = args.needs[1].then(|| vec![T::zero(); sb.numel()]);
                for_each_pair(out, sa, sb, |o, i, j| {
                    let (da, db) = match op {
                        BinOp::Add => (g[o], g[o]),
                        BinOp::Sub => (g[o], -g[o]),
                        BinOp::Mul => (g[o] * xb[j], g[o] * xa[i]),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += db;
                    }
                });
                vec![ga.map(|d| Tensor::from_vec(sa, d)), gb.map(|d| Tensor::from_vec(sb, d))]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Sub)
    }

    /// Elementwise product; a `(N, 1, H, W)` operand broadcasts over channels.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Mul)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let shape = self.shape(x);
        self.record(
            &[x],
            shape,
            shape.numel() as u64,
            |v| v[0].map(f),
            Box::new(move |args| {
                let g = args.grad.as_slice();
                let (xs, ys) = (args.inputs[0].as_slice(), args.output.as_slice());
                let d = (0..g.len()).map(|i| g[i] * df(xs[i], ys[i])).collect();
                vec![Some(Tensor::from_vec(shape, d))]
            }),
        )
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn shift(&self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, move |v| v + s, |_, _| T::one())
    }

    pub fn relu(&self, x: Var) -> Var {
        if self.track_kinks && !self.dry {
            let v = self.value(x);
            self.note_branches(v.as_slice().iter().map(|&e| e > T::zero()));
        }
        self.unary(x, |v| v.max(T::zero()), |v, _| if v > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |v, _| v.recip())
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |v, _| v + v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        if self.track_kinks && !self.dry {
            let v = self.value(x);
            self.note_branches(v.as_slice().iter().flat_map(|&e| [e < lo, e > hi]));
        }
        self.unary(x, move |v| v.max(lo).min(hi), move |v, _| if v < lo || v > hi { T::zero() } else { T::one() })
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` tensor.
    pub fn sum_all(&self, x: Var) -> Var {
        let shape = self.shape(x);
        self.record(
            &[x],
            Shape::scalar(),
            shape.numel() as u64,
            |v| Tensor::scalar(v[0].sum()),
            Box::new(move |args| vec![Some(Tensor::full(shape, args.grad.as_slice()[0]))]),
        )
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.shape(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Per-item sum over channels and plane: `(N, C, H, W) -> (N, 1, 1, 1)`.
    pub fn sum_per_item(&self, x: Var) -> Var {
        let shape = self.shape(x);
        let out = Shape::new(shape.n, 1, 1, 1);
        self.record(
            &[x],
            out,
            shape.numel() as u64,
            |v| Tensor::from_vec(out, (0..shape.n).map(|n| v[0].item(n).iter().copied().sum()).collect()),
            Box::new(move |args| {
                let per = shape.c * shape.plane();
                let g = args.grad.as_slice();
                let d = (0..shape.numel()).map(|i| g[i / per]).collect();
                vec![Some(Tensor::from_vec(shape, d))]
            }),
        )
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&self, xs: &[Var]) -> Var {
        let shapes: Vec<Shape> = xs.iter().map(|&v| self.shape(v)).collect();
        let first = shapes[0];
        for s in &shapes {
            assert!(s.n == first.n && s.h == first.h && s.w == first.w, "concat extent mismatch {s} vs {first}");
        }
        let out = Shape::new(first.n, shapes.iter().map(|s| s.c).sum(), first.h, first.w);
        let shapes_bw = shapes.clone();
        self.record(
            xs,
            out,
            0,
            |v| {
                let mut data = Vec::with_capacity(out.numel());
                for n in 0..out.n {
                    for t in v {
                        data.extend_from_slice(t.item(n));
                    }
                }
                Tensor::from_vec(out, data)
            },
            Box::new(move |args| {
                let g = args.grad;
                let mut outs: Vec<Vec<T>> = shapes_bw.iter().map(|s| Vec::with_capacity(s.numel())).collect();
                let per_out = out.c * out.plane();
                for n in 0..out.n {
                    let item = &g.as_slice()[n * per_out..(n + 1) * per_out];
                    let mut off = 0;
                    for (s, o) in shapes_bw.iter().zip(outs.iter_mut()) {
                        let len = s.c * s.plane();
                        o.extend_from_slice(&item[off..off + len]);
                        off += len;
                    }
                }
                outs.into_iter()
                    .zip(&shapes_bw)
                    .zip(args.needs)
                    .map(|((d, &s), &need)| need.then(|| Tensor::from_vec(s, d)))
                    .collect()
            }),
        )
    }
}

pub fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
