use super::{Element, Graph, Shape, Tensor, Var};

/// Where batch normalization takes its statistics from.
#[derive(Clone, Debug)]
pub enum BnStats<T> {
    /// Statistics of the current batch (training).
    Batch { eps: f64 },
    /// Frozen running estimates (evaluation).
    Running { mean: Vec<T>, var: Vec<T>, eps: f64 },
}

/// Per-channel batch mean and unbiased variance, for running-estimate updates.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> Graph<T> {
    /// Batch normalization with affine `gamma`, `beta` of shape `(1, C, 1, 1)`.
    ///
    /// FLOPs: two per element (scale and shift after folding the statistics).
    pub fn batch_norm(&self, x: Var, gamma: Var, beta: Var, stats: BnStats<T>) -> (Var, Option<BatchMoments<T>>) {
        let s = self.shape(x);
        assert_eq!(self.shape(gamma), Shape::new(1, s.c, 1, 1));
        assert_eq!(self.shape(beta), Shape::new(1, s.c, 1, 1));
        let flops = 2 * s.numel() as u64;
        match stats {
            BnStats::Batch { eps } => {
                let moments = (!self.dry).then(|| moments(&self.value(x)));
                let Some((mean, var_biased)) = moments else {
                    return (self.record(&[x, gamma, beta], s, flops, |_| unreachable!(), Box::new(|_| unreachable!())), None);
                };
                let m = (s.n * s.plane()) as f64;
                let inv_std: Vec<T> = var_biased.iter().map(|&v| (v + T::of(eps)).sqrt().recip()).collect();
                let unbiased = var_biased.iter().map(|&v| if m > 1.0 { v * T::of(m / (m - 1.0)) } else { v }).collect();
                let batch = BatchMoments { mean: mean.clone(), var: unbiased };
                let (mean_f, inv_f) = (mean.clone(), inv_std.clone());
                let y = self.record(
                    &[x, gamma, beta],
                    s,
                    flops,
                    |v| affine(v[0], v[1], v[2], &mean_f, &inv_f),
                    Box::new(move |args| batch_backward(args.grad, args.inputs, args.needs, &mean, &inv_std)),
                );
                (y, Some(batch))
            }
            BnStats::Running { mean, var, eps } => {
                let inv_std: Vec<T> = var.iter().map(|&v| (v + T::of(eps)).sqrt().recip()).collect();
                let (mean_f, inv_f) = (mean.clone(), inv_std.clone());
                let y = self.record(
                    &[x, gamma, beta],
                    s,
                    flops,
                    |v| affine(v[0], v[1], v[2], &mean_f, &inv_f),
                    Box::new(move |args| running_backward(args.grad, args.inputs, args.needs, &mean, &inv_std)),
                );
                (y, None)
            }
        }
    }
}

/// Per-channel mean and biased variance over batch and plane.
fn moments<T: Element>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let m = T::of((s.n * s.plane()) as f64);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += x.plane(n, c).iter().copied().sum();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += x.plane(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum();
        }
        mean[c] = mu;
        var[c] = sq / m;
    }
    (mean, var)
}

fn affine<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Tensor<T> {
    let s = x.shape();
    let p = s.plane();
    let mut y = x.as_slice().to_vec();
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma.as_slice()[c] * inv_std[c];
            let shift = beta.as_slice()[c] - mean[c] * scale;
            let o = (n * s.c + c) * p;
            for v in &mut y[o..o + p] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::from_vec(s, y)
}

fn channel_sums<T: Element>(s: Shape, g: &[T], x: &[T], mean: &[T], inv_std: &[T]) -> (Vec<T>, Vec<T>) {
    let p = s.plane();
    let mut sum_g = vec![T::zero(); s.c];
    let mut sum_gx = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let o = (n * s.c + c) * p;
            for i in o..o + p {
                sum_g[c] += g[i];
                sum_gx[c] += g[i] * (x[i] - mean[c]) * inv_std[c];
            }
        }
    }
    (sum_g, sum_gx)
}

fn batch_backward<T: Element>(
    gy: &Tensor<T>,
    inputs: &[&Tensor<T>],
    needs: &[bool],
    mean: &[T],
    inv_std: &[T],
) -> Vec<Option<Tensor<T>>> {
    let (x, gamma) = (inputs[0], inputs[1]);
    let s = x.shape();
    let p = s.plane();
    let (g, xs) = (gy.as_slice(), x.as_slice());
    let (sum_g, sum_gx) = channel_sums(s, g, xs, mean, inv_std);
    let dx = needs[0].then(|| {
        let m = T::of((s.n * p) as f64);
        let mut d = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let k = gamma.as_slice()[c] * inv_std[c] / m;
                let o = (n * s.c + c) * p;
                for i in o..o + p {
                    let xhat = (xs[i] - mean[c]) * inv_std[c];
                    d[i] = k * (m * g[i] - sum_g[c] - xhat * sum_gx[c]);
                }
            }
        }
        Tensor::from_vec(s, d)
    });
    let cs = Shape::new(1, s.c, 1, 1);
    vec![dx, needs[1].then(|| Tensor::from_vec(cs, sum_gx)), needs[2].then(|| Tensor::from_vec(cs, sum_g))]
}

fn running_backward<T: Element>(
    gy: &Tensor<T>,
    inputs: &[&Tensor<T>],
    needs: &[bool],
    mean: &[T],
    inv_std: &[T],
) -> Vec<Option<Tensor<T>>> {
    let (x, gamma) = (inputs[0], inputs[1]);
    let s = x.shape();
    let p = s.plane();
    let g = gy.as_slice();
    let (sum_g, sum_gx) = channel_sums(s, g, x.as_slice(), mean, inv_std);
    let dx = needs[0].then(|| {
        let mut d = g.to_vec();
        for n in 0..s.n {
            for c in 0..s.c {
                let k = gamma.as_slice()[c] * inv_std[c];
                let o = (n * s.c + c) * p;
                for v in &mut d[o..o + p] {
                    *v *= k;
                }
            }
        }
        Tensor::from_vec(s, d)
    });
    let cs = Shape::new(1, s.c, 1, 1);
    vec![dx, needs[1].then(|| Tensor::from_vec(cs, sum_gx)), needs[2].then(|| Tensor::from_vec(cs, sum_g))]
}
