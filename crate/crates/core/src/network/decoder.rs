use rand::Rng;

use crate::autograd::{ConvSpec, Element, Var};
use crate::nn::{Conv2d, ConvBn, Ctx, ParamStore};
use crate::{Error, Result};

/// What multiplies the decoder features in a boundary-guided block.
#[derive(Clone, Copy, Debug)]
pub enum Gate {
    /// A boundary distribution map of shape `(N, 1, H, W)`, resized per block.
    Map(Var),
    /// A map of all ones; the gated terms pass through unchanged.
    Identity,
    /// The gated terms are dropped entirely, as if the map were zero.
    Suppressed,
}

impl Gate {
    /// `feat` multiplied by the gate resampled to `feat`'s resolution, or
    /// `None` when the gate suppresses the term.
    fn apply<T: Element>(self, ctx: &Ctx<T>, feat: Var, map_hi: Option<Var>, lo: bool) -> Option<Var> {
        let g = ctx.graph();
        match self {
            Gate::Suppressed => None,
            Gate::Identity => Some(feat),
            Gate::Map(_) => {
                let hi = map_hi.expect("map gates are resampled by the caller");
                Some(g.mul(feat, if lo { g.avg_pool2(hi) } else { hi }))
            }
        }
    }

    /// The map at `(h, w)`, where `h` and `w` are the block's output extent.
    fn at<T: Element>(self, ctx: &Ctx<T>, h: usize, w: usize, align_corners: bool) -> Option<Var> {
        match self {
            Gate::Map(m) => Some(ctx.graph().resize_bilinear(m, h, w, align_corners)),
            _ => None,
        }
    }
}

fn add_opt<T: Element>(ctx: &Ctx<T>, a: Var, b: Option<Var>) -> Var {
    match b {
        Some(b) => ctx.graph().add(a, b),
        None => a,
    }
}

fn check_pair<T: Element>(ctx: &Ctx<T>, e: Var, d: Var) -> Result<()> {
    let g = ctx.graph();
    let (se, sd) = (g.shape(e), g.shape(d));
    if se.n != sd.n || se.h != 2 * sd.h || se.w != 2 * sd.w {
        return Err(Error::Shape(format!("skip feature {se} must be exactly twice the decoder feature {sd}")));
    }
    Ok(())
}

/// Boundary-guided decoder block with an encoder skip.
///
/// ```text
/// e', d'  = 1x1 transitions of the skip e and the decoder input d
/// high    = Conv(Up(d')) + e' * B_high
/// low     = Conv(Down(e')) + d' * B_low
/// fused   = Up(low) + high
/// out     = Conv(fused) + fused
/// ```
///
/// `B_high` is the map at the skip's resolution and `B_low` its 2x2 average.
#[derive(Clone, Debug)]
pub struct BdgdA {
    trans_e: ConvBn,
    trans_d: ConvBn,
    up_block: ConvBn,
    down_block: ConvBn,
    out_block: ConvBn,
}

impl BdgdA {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, ce: usize, cd: usize, c: usize) -> Self {
        Self {
            trans_e: ConvBn::block1(store, rng, &format!("{name}.trans_e"), ce, c),
            trans_d: ConvBn::block1(store, rng, &format!("{name}.trans_d"), cd, c),
            up_block: ConvBn::block3(store, rng, &format!("{name}.up"), c, c),
            down_block: ConvBn::block3(store, rng, &format!("{name}.down"), c, c),
            out_block: ConvBn::block3(store, rng, &format!("{name}.out"), c, c),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, e: Var, d: Var, gate: Gate, align_corners: bool) -> Result<Var> {
        check_pair(ctx, e, d)?;
        let g = ctx.graph();
        let se = g.shape(e);
        let e1 = self.trans_e.forward(ctx, e);
        let d1 = self.trans_d.forward(ctx, d);
        let map_hi = gate.at(ctx, se.h, se.w, align_corners);
        let d_up = g.resize_bilinear(d1, se.h, se.w, align_corners);
        let high = add_opt(ctx, self.up_block.forward(ctx, d_up), gate.apply(ctx, e1, map_hi, false));
        let e_down = g.avg_pool2(e1);
        let low = add_opt(ctx, self.down_block.forward(ctx, e_down), gate.apply(ctx, d1, map_hi, true));
        let fused = g.add(g.resize_bilinear(low, se.h, se.w, align_corners), high);
        Ok(g.add(self.out_block.forward(ctx, fused), fused))
    }
}

/// Boundary-guided decoder block without an encoder skip: the skip terms of
/// [`BdgdA`] are removed, leaving `high = Conv(Up(d'))` and `low = d' * B_low`.
#[derive(Clone, Debug)]
pub struct BdgdB {
    trans_d: ConvBn,
    up_block: ConvBn,
    out_block: ConvBn,
}

impl BdgdB {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, cd: usize, c: usize) -> Self {
        Self {
            trans_d: ConvBn::block1(store, rng, &format!("{name}.trans_d"), cd, c),
            up_block: ConvBn::block3(store, rng, &format!("{name}.up"), c, c),
            out_block: ConvBn::block3(store, rng, &format!("{name}.out"), c, c),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, d: Var, gate: Gate, align_corners: bool) -> Result<Var> {
        let g = ctx.graph();
        let sd = g.shape(d);
        let (h, w) = (2 * sd.h, 2 * sd.w);
        let d1 = self.trans_d.forward(ctx, d);
        let map_hi = gate.at(ctx, h, w, align_corners);
        let high = self.up_block.forward(ctx, g.resize_bilinear(d1, h, w, align_corners));
        let fused = match gate.apply(ctx, d1, map_hi, true) {
            Some(low) => g.add(g.resize_bilinear(low, h, w, align_corners), high),
            None => high,
        };
        Ok(g.add(self.out_block.forward(ctx, fused), fused))
    }
}

/// Ungated upsampling block used when boundary guidance is ablated:
/// `out = Conv(Up(d')) + e'` with `e'` present only when a skip is wired.
#[derive(Clone, Debug)]
pub struct PlainBlock {
    trans_d: ConvBn,
    trans_e: Option<ConvBn>,
    up_block: ConvBn,
}

impl PlainBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        ce: Option<usize>,
        cd: usize,
        c: usize,
    ) -> Self {
        Self {
            trans_d: ConvBn::block1(store, rng, &format!("{name}.trans_d"), cd, c),
            trans_e: ce.map(|ce| ConvBn::block1(store, rng, &format!("{name}.trans_e"), ce, c)),
            up_block: ConvBn::block3(store, rng, &format!("{name}.up"), c, c),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, e: Option<Var>, d: Var, align_corners: bool) -> Result<Var> {
        let g = ctx.graph();
        let sd = g.shape(d);
        let d1 = self.trans_d.forward(ctx, d);
        let up = self.up_block.forward(ctx, g.resize_bilinear(d1, 2 * sd.h, 2 * sd.w, align_corners));
        match (&self.trans_e, e) {
            (Some(t), Some(e)) => {
                check_pair(ctx, e, d)?;
                Ok(g.add(up, t.forward(ctx, e)))
            }
            (None, None) => Ok(up),
            _ => Err(Error::Shape("plain decoder block skip wiring does not match its construction".into())),
        }
    }
}

#[derive(Clone, Debug)]
pub enum DecoderBlock {
    A(BdgdA),
    B(BdgdB),
    Plain(PlainBlock),
}

/// One decoder stage; stage `level` produces features at stride `2^level`.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub level: u8,
    pub block: DecoderBlock,
}

/// Features consumed by the decoder.
#[derive(Clone, Copy, Debug)]
pub struct DecoderInputs {
    /// Encoder stages at strides 4, 8, 16 and 32.
    pub stages: [Var; 4],
    /// Stride-2 encoder feature, required only by a level-1 skip.
    pub stem: Option<Var>,
}

/// Top-down decoder: a 1x1 transition of the deepest encoder stage followed
/// by stages at levels 4, 3, 2 and 1 and a 1x1 prediction head. The head runs
/// at stride 2 and is upsampled to the input resolution.
#[derive(Clone, Debug)]
pub struct Decoder {
    top: ConvBn,
    stages: Vec<DecoderStage>,
    head: Conv2d,
}

/// Encoder feature index that feeds the skip of decoder level `level`.
fn skip_source(level: u8) -> Option<usize> {
    match level {
        4 => Some(2),
        3 => Some(1),
        2 => Some(0),
        _ => None,
    }
}

impl Decoder {
    /// `skip_levels` lists the levels that receive an encoder skip. With
    /// `guided` those levels use [`BdgdA`] and the rest [`BdgdB`]; otherwise
    /// every level is a [`PlainBlock`].
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        channels: [usize; 4],
        stem_channels: Option<usize>,
        skip_levels: &[u8],
        width: usize,
        guided: bool,
    ) -> Result<Self> {
        let top = ConvBn::block1(store, rng, "decoder.top", channels[3], width);
        let mut stages = Vec::with_capacity(4);
        for level in (1..=4u8).rev() {
            let name = format!("decoder.stage{level}");
            let skip = skip_levels.contains(&level);
            let ce = match (skip, skip_source(level)) {
                (false, _) => None,
                (true, Some(i)) => Some(channels[i]),
                (true, None) => Some(
                    stem_channels
                        .ok_or_else(|| Error::Config("a level-1 skip needs an encoder that exposes a stride-2 feature".into()))?,
                ),
            };
            let block = match (guided, ce) {
                (true, Some(ce)) => DecoderBlock::A(BdgdA::new(store, rng, &name, ce, width, width)),
                (true, None) => DecoderBlock::B(BdgdB::new(store, rng, &name, width, width)),
                (false, ce) => DecoderBlock::Plain(PlainBlock::new(store, rng, &name, ce, width, width)),
            };
            stages.push(DecoderStage { level, block });
        }
        let head = Conv2d::new(store, rng, "decoder.head", width, 1, (1, 1), ConvSpec::same(1, 1, 1), true);
        Ok(Self { top, stages, head })
    }

    pub fn stages(&self) -> &[DecoderStage] {
        &self.stages
    }

    /// Returns the full-resolution logits and the output of every stage.
    pub fn forward<T: Element>(
        &self,
        ctx: &Ctx<T>,
        inputs: DecoderInputs,
        gate: Gate,
        align_corners: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let g = ctx.graph();
        let mut d = self.top.forward(ctx, inputs.stages[3]);
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let skip = || -> Result<Var> {
                match skip_source(stage.level) {
                    Some(i) => Ok(inputs.stages[i]),
                    None => inputs.stem.ok_or_else(|| Error::Shape("level-1 skip requested but the encoder gave no stem".into())),
                }
            };
            d = match &stage.block {
                DecoderBlock::A(b) => b.forward(ctx, skip()?, d, gate, align_corners)?,
                DecoderBlock::B(b) => b.forward(ctx, d, gate, align_corners)?,
                DecoderBlock::Plain(b) => {
                    let e = if b.trans_e.is_some() { Some(skip()?) } else { None };
                    b.forward(ctx, e, d, align_corners)?
                }
            };
            outs.push(d);
        }
        let s = g.shape(d);
        let logits = g.resize_bilinear(self.head.forward(ctx, d), 2 * s.h, 2 * s.w, align_corners);
        Ok((logits, outs))
    }
}
