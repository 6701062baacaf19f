//! Central finite-difference checks of reverse-mode gradients.
//!
//! The function under test may be piecewise smooth (ReLU, clamps, loss
//! thresholds). Each evaluation records a fingerprint of its branch decisions;
//! a coordinate whose perturbed evaluations land on a different branch than
//! the base point is skipped, because finite differences straddling a kink do
//! not estimate the derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Magnitudes below this floor are compared absolutely rather than relatively.
    pub floor: f64,
    /// Seed of the random projection that turns the output into a scalar.
    pub seed: u64,
    /// Check at most this many coordinates per input, evenly spread.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, floor: 1e-6, seed: 0, max_coords: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// `(input, coordinate, analytic, numeric)` of the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates skipped because a probe crossed a branch point.
    pub skipped: usize,
}

struct Eval {
    objective: f64,
    signature: u64,
}

/// Checks the gradient of `f` with respect to every tensor in `values`.
///
/// `f` receives one graph leaf per value and may return a tensor of any
/// shape; the check differentiates its inner product with fixed random
/// weights in `[-1, 1]`.
pub fn check_gradients<F>(values: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut weights: Option<Tensor<f64>> = None;
    let mut eval = |vals: &[Tensor<f64>], grads: bool| -> Result<(Eval, Vec<Tensor<f64>>)> {
        let g = Graph::with_kink_tracking();
        let vars: Vec<Var> = vals.iter().map(|v| g.input(v.clone())).collect();
        let out = f(&g, &vars)?;
        let shape = g.shape(out);
        let r = weights
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
            })
            .clone();
        let obj = g.sum_all(g.mul(out, g.constant(r)));
        let e = Eval { objective: g.value(obj).as_slice()[0], signature: g.kink_signature() };
        let gs = if grads {
            let mut gr = g.backward(obj);
            vars.iter().zip(vals).map(|(&v, t)| gr.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect()
        } else {
            Vec::new()
        };
        Ok((e, gs))
    };

    let (base, analytic) = eval(values, true)?;
    let mut report = GradCheckReport::default();
    let mut probe = values.to_vec();
    for (k, value) in values.iter().enumerate() {
        let n = value.shape().numel();
        let stride = opts.max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let x = value.as_slice()[i];
            probe[k].as_mut_slice()[i] = x + opts.step;
            let (plus, _) = eval(&probe, false)?;
            probe[k].as_mut_slice()[i] = x - opts.step;
            let (minus, _) = eval(&probe, false)?;
            probe[k].as_mut_slice()[i] = x;
            if plus.signature != base.signature || minus.signature != base.signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.objective - minus.objective) / (2.0 * opts.step);
            let a = analytic[k].as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((k, i, a, numeric));
            }
        }
    }
    Ok(report)
}
