//! Parameters, forward contexts and the handful of layers the network is built from.

use std::cell::RefCell;

use rand::Rng;

use crate::autograd::{BatchMoments, BnStats, ConvSpec, Element, Graph, Shape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by the optimizer.
    Weight,
    /// Persistent state that is not trained (running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param { name, value, kind });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars whose parameter name starts with `prefix`.
    pub fn weight_count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight && p.name.starts_with(prefix))
            .map(|p| p.value.shape().numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast(), kind: p.kind }).collect(),
        }
    }

    /// Folds batch moments into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for u in updates {
            for (slot, batch) in [(u.mean, &u.moments.mean), (u.var, &u.moments.var)] {
                for (r, &b) in self.get_mut(slot).as_mut_slice().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Frozen running statistics.
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub moments: BatchMoments<T>,
}

/// One forward evaluation: the graph being recorded, the parameters it reads
/// and the side effects (running-statistic updates) it produces.
pub struct Ctx<'a, T: Element> {
    graph: &'a Graph<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    param_grads: bool,
    vars: RefCell<Vec<Option<Var>>>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
}

impl<'a, T: Element> Ctx<'a, T> {
    /// Parameters receive gradients in [`Mode::Train`] only.
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            graph,
            store,
            mode,
            param_grads: mode == Mode::Train,
            vars: RefCell::new(vec![None; store.len()]),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn with_param_grads(mut self, on: bool) -> Self {
        self.param_grads = on;
        self
    }

    pub fn graph(&self) -> &'a Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let p = self.store.param(id);
        let v = self.graph.leaf(p.value.clone(), self.param_grads && p.kind == ParamKind::Weight);
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Uses `var` as the leaf of parameter `id`, so gradients with respect to
    /// the parameter land on a leaf the caller controls.
    pub fn bind_param(&self, id: ParamId, var: Var) {
        self.vars.borrow_mut()[id.0] = Some(var);
    }

    /// `(parameter, leaf)` pairs touched by this forward pass.
    pub fn param_vars(&self) -> Vec<(ParamId, Var)> {
        self.vars.borrow().iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v))).collect()
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }
}

fn uniform<T: Element>(rng: &mut impl Rng, shape: Shape, bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
}

impl Conv2d {
    /// Fan-in scaled uniform weights (`sqrt(6 / fan_in)` bound), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let shape = Shape::new(cout, cin, kernel.0, kernel.1);
        let fan_in = (cin * kernel.0 * kernel.1) as f64;
        let weight = store.add(format!("{name}.weight"), uniform(rng, shape, (6.0 / fan_in).sqrt()), ParamKind::Weight);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1)), ParamKind::Weight));
        Self { weight, bias, spec }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: Var) -> Var {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph().conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(s, T::one()), ParamKind::Weight),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(s), ParamKind::Weight),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(s), ParamKind::Buffer),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(s, T::one()), ParamKind::Buffer),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: Var) -> Var {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        let stats = match ctx.mode() {
            Mode::Train => BnStats::Batch { eps: BN_EPS },
            Mode::Eval => BnStats::Running {
                mean: ctx.store().get(self.running_mean).as_slice().to_vec(),
                var: ctx.store().get(self.running_var).as_slice().to_vec(),
                eps: BN_EPS,
            },
        };
        let (y, moments) = ctx.graph().batch_norm(x, gamma, beta, stats);
        if let Some(moments) = moments {
            ctx.bn_updates.borrow_mut().push(BnUpdate { mean: self.running_mean, var: self.running_var, moments });
        }
        y
    }
}

/// Convolution, batch normalization and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: bool,
}

impl ConvBn {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        relu: bool,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), cin, cout, kernel, spec, false),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
            relu,
        }
    }

    /// 3x3 "same" convolution + BN + ReLU.
    pub fn block3<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(store, rng, name, cin, cout, (3, 3), ConvSpec::same(3, 3, 1), true)
    }

    /// 1x1 convolution + BN + ReLU.
    pub fn block1<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(store, rng, name, cin, cout, (1, 1), ConvSpec::same(1, 1, 1), true)
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: Var) -> Var {
        let y = self.conv.forward(ctx, x);
        let y = self.bn.forward(ctx, y);
        if self.relu {
            ctx.graph().relu(y)
        } else {
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Train);
        let x = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 6.0]));
        bn.forward(&ctx, x);
        let updates = ctx.take_bn_updates();
        store.apply_bn_updates(&updates);
        let mean = store.get(store.find("bn.running_mean").unwrap()).as_slice()[0];
        let var = store.get(store.find("bn.running_var").unwrap()).as_slice()[0];
        assert!((mean - 0.3).abs() < 1e-12);
        // unbiased variance of [1, 2, 3, 6] is 14 / 3
        assert!((var - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_params_do_not_require_grad() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut store, &mut rng, "c", 2, 3, (3, 3), ConvSpec::same(3, 3, 1), true);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let x = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let y = conv.forward(&ctx, x);
        assert!(!g.requires_grad(y));
        assert_eq!(store.weight_count("c."), 2 * 3 * 9 + 3);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        BatchNorm2d::new(&mut store, "bn", 1);
        BatchNorm2d::new(&mut store, "bn", 1);
    }
}
