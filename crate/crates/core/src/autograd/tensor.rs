use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the engine computes in. Implemented for `f32` (training) and
/// `f64` (gradient checks).
pub trait Element: Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static {
    /// `c <- alpha * a * b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// All strides and extents must address memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite cast")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite cast")
    }
}

impl Element for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: cols, cs: 1 }
    }

    pub fn transposed(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// Bounds-checked `c = a * b + beta * c`.
pub(crate) fn gemm<T: Element>(a: &[T], la: Layout, b: &[T], lb: Layout, beta: T, c: &mut [T], lc: Layout) {
    assert_eq!(la.cols, lb.rows, "inner dimensions differ");
    assert_eq!((la.rows, lb.cols), (lc.rows, lc.cols), "output extent differs");
    assert!(a.len() >= la.span() && b.len() >= lb.span() && c.len() >= lc.span());
    // SAFETY: extents were checked against the slice lengths just above.
    unsafe {
        T::gemm_raw(
            la.rows,
            la.cols,
            lb.cols,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        )
    }
}

/// Extent of an NCHW tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor. A tensor produced by a dry-run graph has a shape but no data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(shape.numel(), data.len(), "data length does not match shape {shape}");
        Self { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Self { shape, data: vec![v; shape.numel()] }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::scalar(), v)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub(crate) fn shape_only(shape: Shape) -> Self {
        Self { shape, data: Vec::new() }
    }

    pub fn is_materialized(&self) -> bool {
        self.data.len() == self.shape.numel()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    /// Contiguous `(h, w)` plane of item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let o = (n * self.shape.c + c) * p;
        &self.data[o..o + p]
    }

    /// All channels of item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape);
        Self { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn reshape(self, shape: Shape) -> Self {
        assert_eq!(self.shape.numel(), shape.numel());
        Self { shape, data: self.data }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::of(v.as_f64())).collect() }
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Self {
        let first = items.first().expect("stack of zero tensors").shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            assert_eq!(Shape { n: first.n, ..t.shape }, first);
            data.extend_from_slice(&t.data);
        }
        Self { shape: Shape { n: first.n * items.len(), ..first }, data }
    }

    /// Batch items `[start, start + len)`.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        Self { shape: Shape { n: len, ..self.shape }, data: self.data[start * per..(start + len) * per].to_vec() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs().as_f64()).fold(0.0, f64::max)
    }
}
