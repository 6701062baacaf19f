use rand::Rng;

use crate::autograd::{ConvSpec, Element, Var};
use crate::nn::{ConvBn, Ctx, ParamStore};

/// Receptive field block: four parallel branches with growing receptive
/// fields, concatenated and projected back to `out` channels, plus a 1x1
/// residual path.
///
/// Branch `k` for `k` in 1..=3 uses kernel size `s = 2k + 1`: a 1x1 reduction,
/// a `1 x s` and an `s x 1` convolution, then a 3x3 convolution dilated by `s`.
#[derive(Clone, Debug)]
pub struct Rfb {
    branch0: ConvBn,
    branches: Vec<[ConvBn; 4]>,
    project: ConvBn,
    residual: ConvBn,
}

impl Rfb {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, cin: usize, out: usize) -> Self {
        let branch0 = ConvBn::new(store, rng, &format!("{name}.branch0"), cin, out, (1, 1), ConvSpec::same(1, 1, 1), false);
        let branches = [3usize, 5, 7]
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let n = format!("{name}.branch{}", i + 1);
                [
                    ConvBn::new(store, rng, &format!("{n}.0"), cin, out, (1, 1), ConvSpec::same(1, 1, 1), false),
                    ConvBn::new(store, rng, &format!("{n}.1"), out, out, (1, s), ConvSpec::same(1, s, 1), false),
                    ConvBn::new(store, rng, &format!("{n}.2"), out, out, (s, 1), ConvSpec::same(s, 1, 1), false),
                    ConvBn::new(store, rng, &format!("{n}.3"), out, out, (3, 3), ConvSpec::same(3, 3, s), false),
                ]
            })
            .collect();
        let project = ConvBn::new(store, rng, &format!("{name}.project"), 4 * out, out, (1, 1), ConvSpec::same(1, 1, 1), false);
        let residual = ConvBn::new(store, rng, &format!("{name}.residual"), cin, out, (1, 1), ConvSpec::same(1, 1, 1), false);
        Self { branch0, branches, project, residual }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: Var) -> Var {
        let g = ctx.graph();
        let mut outs = vec![self.branch0.forward(ctx, x)];
        for branch in &self.branches {
            outs.push(branch.iter().fold(x, |h, layer| layer.forward(ctx, h)));
        }
        let cat = g.concat_channels(&outs);
        let y = g.add(self.project.forward(ctx, cat), self.residual.forward(ctx, x));
        g.relu(y)
    }
}
