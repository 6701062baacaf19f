use rand::Rng;

use crate::autograd::{ConvSpec, Element, Var};
use crate::nn::{Conv2d, Ctx, ParamStore};
use crate::{Error, Result};

use super::aggregate::Aggregate;
use super::rfb::Rfb;

/// Intermediate and final tensors of the boundary generation module.
#[derive(Clone, Copy, Debug)]
pub struct BdgmOutput {
    /// Aggregation of the stride-16 and stride-32 features, at stride 16.
    pub agg1: Var,
    /// Aggregation of the stride-8 features with `agg1`, at stride 8.
    pub agg2: Var,
    /// Pre-sigmoid map at input resolution.
    pub logits: Var,
    /// Predicted boundary distribution map in `(0, 1)` at input resolution.
    pub bdm: Var,
}

/// Predicts a boundary distribution map from the three deepest encoder stages.
#[derive(Clone, Debug)]
pub struct Bdgm {
    rfb2: Rfb,
    rfb3: Rfb,
    rfb4: Rfb,
    agg1: Aggregate,
    agg2: Aggregate,
    head: Conv2d,
}

impl Bdgm {
    /// `channels` are the encoder widths of stages 2, 3 and 4; `width` is the
    /// common width after the receptive field blocks.
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, channels: [usize; 3], width: usize) -> Self {
        Self {
            rfb2: Rfb::new(store, rng, "bdgm.rfb2", channels[0], width),
            rfb3: Rfb::new(store, rng, "bdgm.rfb3", channels[1], width),
            rfb4: Rfb::new(store, rng, "bdgm.rfb4", channels[2], width),
            agg1: Aggregate::new(store, rng, "bdgm.agg1", width),
            agg2: Aggregate::new(store, rng, "bdgm.agg2", width),
            head: Conv2d::new(store, rng, "bdgm.head", width, 1, (1, 1), ConvSpec::same(1, 1, 1), true),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, e2: Var, e3: Var, e4: Var, align_corners: bool) -> Result<BdgmOutput> {
        let g = ctx.graph();
        let (s2, s3, s4) = (g.shape(e2), g.shape(e3), g.shape(e4));
        if s3.h != 2 * s4.h || s3.w != 2 * s4.w || s2.h != 2 * s3.h || s2.w != 2 * s3.w {
            return Err(Error::Shape(format!("boundary module inputs {s2}, {s3}, {s4} are not a stride-2 ladder")));
        }
        let (r2, r3, r4) = (self.rfb2.forward(ctx, e2), self.rfb3.forward(ctx, e3), self.rfb4.forward(ctx, e4));
        let agg1 = self.agg1.forward(ctx, r3, r4, align_corners)?;
        let agg2 = self.agg2.forward(ctx, r2, agg1, align_corners)?;
        let head = self.head.forward(ctx, agg2);
        let logits = g.resize_bilinear(head, 8 * s2.h, 8 * s2.w, align_corners);
        let bdm = g.sigmoid(logits);
        Ok(BdgmOutput { agg1, agg2, logits, bdm })
    }
}
