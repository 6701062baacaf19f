use rand::Rng;

use crate::autograd::{Element, Var};
use crate::nn::{ConvBn, Ctx, ParamStore};
use crate::{Error, Result};

/// Two-scale feature aggregation.
///
/// With `f_hl` the average-pooled high-resolution input and `f_lh` the
/// bilinearly upsampled low-resolution input:
///
/// ```text
/// f'_h  = Conv(f_h) + Conv(f_lh)
/// f'_l  = Conv(f_l) + Conv(f_hl)
/// f_out = Conv(f'_h) + Conv(Up(f'_l))
/// ```
///
/// where every `Conv` is a 3x3 convolution followed by BN and ReLU.
#[derive(Clone, Debug)]
pub struct Aggregate {
    channels: usize,
    conv_h: ConvBn,
    conv_lh: ConvBn,
    conv_l: ConvBn,
    conv_hl: ConvBn,
    out_h: ConvBn,
    out_l: ConvBn,
}

impl Aggregate {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let mut block = |suffix: &str| ConvBn::block3(store, rng, &format!("{name}.{suffix}"), channels, channels);
        Self {
            channels,
            conv_h: block("conv_h"),
            conv_lh: block("conv_lh"),
            conv_l: block("conv_l"),
            conv_hl: block("conv_hl"),
            out_h: block("out_h"),
            out_l: block("out_l"),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, f_h: Var, f_l: Var, align_corners: bool) -> Result<Var> {
        let g = ctx.graph();
        let (sh, sl) = (g.shape(f_h), g.shape(f_l));
        if sh.c != self.channels || sl.c != self.channels {
            return Err(Error::Shape(format!("aggregate expects {} channels, got {sh} and {sl}", self.channels)));
        }
        if sh.n != sl.n || sh.h != 2 * sl.h || sh.w != 2 * sl.w {
            return Err(Error::Shape(format!("aggregate needs f_h at exactly twice f_l's resolution, got {sh} and {sl}")));
        }
        let f_hl = g.avg_pool2(f_h);
        let f_lh = g.resize_bilinear(f_l, sh.h, sh.w, align_corners);
        let fh = g.add(self.conv_h.forward(ctx, f_h), self.conv_lh.forward(ctx, f_lh));
        let fl = g.add(self.conv_l.forward(ctx, f_l), self.conv_hl.forward(ctx, f_hl));
        let fl_up = g.resize_bilinear(fl, sh.h, sh.w, align_corners);
        Ok(g.add(self.out_h.forward(ctx, fh), self.out_l.forward(ctx, fl_up)))
    }
}
