//! The gradient-check instances shared by the gradient tests and the
//! acceptance suite: every case builds a small random instance from `seed`
//! and compares analytic gradients with central differences.

use bdgnet::autograd::{Graph, Shape, Tensor, Var};
use bdgnet::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use bdgnet::losses::{l_bdm, l_total, l_wbce, l_wiou, weight_map, LossConfig};
use bdgnet::network::{Aggregate, BdgdA, BdgdB, Gate};
use bdgnet::nn::ParamStore;

use super::{binary_tensor, module_gradcheck, random_tensor, rng};

pub const GRAD_CASES: [&str; 7] = ["aggregate", "bdgd_a", "bdgd_b", "l_bdm", "l_wbce", "l_wiou", "l_total"];

/// Seeds per case.
pub const GRAD_SEEDS: u64 = 5;

fn loss_check(values: Vec<Tensor<f64>>, seed: u64, f: impl Fn(&Graph<f64>, &[Var]) -> bdgnet::Result<Var>) -> GradCheckReport {
    check_gradients(&values, f, GradCheckOptions { seed, ..GradCheckOptions::default() }).unwrap()
}

/// Runs case `name` on instance `seed`.
pub fn grad_case(name: &str, seed: u64) -> GradCheckReport {
    match name {
        "aggregate" => {
            let mut r = rng(seed);
            let mut store = ParamStore::<f64>::new();
            let agg = Aggregate::new(&mut store, &mut r, "agg", 2);
            let f_h = random_tensor(&mut r, Shape::new(2, 2, 4, 4), -1.0, 1.0);
            let f_l = random_tensor(&mut r, Shape::new(2, 2, 2, 2), -1.0, 1.0);
            module_gradcheck(&store, vec![f_h, f_l], seed, |ctx, v| agg.forward(ctx, v[0], v[1], false)).unwrap()
        }
        "bdgd_a" => {
            let mut r = rng(100 + seed);
            let mut store = ParamStore::<f64>::new();
            let block = BdgdA::new(&mut store, &mut r, "a", 3, 2, 2);
            let e = random_tensor(&mut r, Shape::new(2, 3, 8, 8), -1.0, 1.0);
            let d = random_tensor(&mut r, Shape::new(2, 2, 4, 4), -1.0, 1.0);
            let bdm = random_tensor(&mut r, Shape::new(2, 1, 16, 16), 0.0, 1.0);
            module_gradcheck(&store, vec![e, d, bdm], seed, |ctx, v| block.forward(ctx, v[0], v[1], Gate::Map(v[2]), false))
                .unwrap()
        }
        "bdgd_b" => {
            let mut r = rng(200 + seed);
            let mut store = ParamStore::<f64>::new();
            let block = BdgdB::new(&mut store, &mut r, "b", 3, 2);
            let d = random_tensor(&mut r, Shape::new(2, 3, 2, 2), -1.0, 1.0);
            let bdm = random_tensor(&mut r, Shape::new(2, 1, 8, 8), 0.0, 1.0);
            module_gradcheck(&store, vec![d, bdm], seed, |ctx, v| block.forward(ctx, v[0], Gate::Map(v[1]), false)).unwrap()
        }
        "l_bdm" => {
            let literal = seed % 2 == 1;
            let mut r = rng(300 + seed);
            let shape = Shape::new(2, 1, 6, 6);
            let pred = random_tensor(&mut r, shape, 0.0, 1.0);
            let ideal = random_tensor(&mut r, shape, 0.0, 1.0);
            let cfg = LossConfig { literal_forms: literal, ..LossConfig::default() };
            loss_check(vec![pred], seed, |g, v| l_bdm(g, v[0], &ideal, &cfg))
        }
        "l_wbce" => {
            let mut r = rng(400 + seed);
            let shape = Shape::new(2, 1, 6, 6);
            let prob = random_tensor(&mut r, shape, 0.05, 0.95);
            let gt = binary_tensor(&mut r, shape);
            let w = weight_map(&gt, &LossConfig { weight_kernel: 3, ..LossConfig::default() });
            loss_check(vec![prob], seed, |g, v| l_wbce(g, v[0], &gt, &w, seed % 2 == 1))
        }
        "l_wiou" => {
            let mut r = rng(500 + seed);
            let shape = Shape::new(2, 1, 6, 6);
            let prob = random_tensor(&mut r, shape, 0.0, 1.0);
            let gt = binary_tensor(&mut r, shape);
            let w = weight_map(&gt, &LossConfig { weight_kernel: 3, ..LossConfig::default() });
            loss_check(vec![prob], seed, |g, v| l_wiou(g, v[0], &gt, &w))
        }
        "l_total" => {
            let mut r = rng(600 + seed);
            let shape = Shape::new(2, 1, 6, 6);
            let logits = random_tensor(&mut r, shape, -3.0, 3.0);
            let bdm = random_tensor(&mut r, shape, 0.0, 1.0);
            let gt = binary_tensor(&mut r, shape);
            let ideal = random_tensor(&mut r, shape, 0.0, 1.0);
            let cfg = LossConfig { weight_kernel: 3, ..LossConfig::default() };
            loss_check(vec![logits, bdm], seed, |g, v| Ok(l_total(g, v[0], Some(v[1]), &gt, &ideal, &cfg)?.total))
        }
        _ => panic!("unknown gradient case `{name}`"),
    }
}
