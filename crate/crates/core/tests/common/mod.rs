#![allow(dead_code)]

use bdgnet::autograd::{Graph, Shape, Tensor, Var};
use bdgnet::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use bdgnet::nn::{Ctx, Mode, ParamId, ParamKind, ParamStore};
use bdgnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn binary_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

/// Gradient check of a module's output with respect to its inputs and every
/// trainable parameter, in training mode.
pub fn module_gradcheck<F>(store: &ParamStore<f64>, inputs: Vec<Tensor<f64>>, seed: u64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&Ctx<f64>, &[Var]) -> Result<Var>,
{
    let weights: Vec<ParamId> = store.iter().filter(|(_, p)| p.kind == ParamKind::Weight).map(|(id, _)| id).collect();
    let n_inputs = inputs.len();
    let mut values = inputs;
    values.extend(weights.iter().map(|&id| store.get(id).clone()));
    let opts = GradCheckOptions { seed, max_coords: Some(24), ..GradCheckOptions::default() };
    check_gradients(
        &values,
        |g: &Graph<f64>, vars: &[Var]| {
            let ctx = Ctx::new(g, store, Mode::Train);
            for (&id, &v) in weights.iter().zip(&vars[n_inputs..]) {
                ctx.bind_param(id, v);
            }
            forward(&ctx, &vars[..n_inputs])
        },
        opts,
    )
}

pub const GRAD_TOL: f64 = 1e-3;

pub mod grad_cases;
pub mod metric_oracles;
