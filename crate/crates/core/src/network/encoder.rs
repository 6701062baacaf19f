use rand::Rng;

use crate::autograd::{ConvSpec, Element, Shape, Var};
use crate::nn::{ConvBn, Ctx, ParamStore};
use crate::{Error, Result};

/// Strides of the four encoder stages relative to the input.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Channel widths of the built-in toy encoder.
pub const TOY_CHANNELS: [usize; 4] = [16, 32, 64, 128];

/// Multi-stage features at strides 4, 8, 16 and 32.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub stages: [Var; 4],
    /// Optional stride-2 feature; only the shallowest decoder skip uses it.
    pub stem: Option<Var>,
}

/// A backbone the network can sit on. Implementations register their
/// parameters in the network's [`ParamStore`] when they are constructed.
pub trait Encoder<T: Element>: Send + Sync {
    fn channels(&self) -> [usize; 4];

    fn stem_channels(&self) -> Option<usize> {
        None
    }

    fn forward(&self, ctx: &Ctx<T>, image: Var) -> Result<EncoderOutput>;
}

pub(crate) fn check_input(shape: Shape) -> Result<()> {
    if shape.c != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {shape}")));
    }
    if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(32) || !shape.w.is_multiple_of(32) {
        return Err(Error::Shape(format!("image extent {}x{} is not a non-zero multiple of 32", shape.h, shape.w)));
    }
    Ok(())
}

/// Checks an encoder's output against its declared channels and the stride ladder.
pub fn validate_output<T: Element>(ctx: &Ctx<T>, input: Shape, channels: [usize; 4], out: &EncoderOutput) -> Result<()> {
    let g = ctx.graph();
    for (i, (&v, &stride)) in out.stages.iter().zip(&STAGE_STRIDES).enumerate() {
        let want = Shape::new(input.n, channels[i], input.h / stride, input.w / stride);
        let got = g.shape(v);
        if got != want {
            return Err(Error::Shape(format!("encoder stage {} is {got}, expected {want}", i + 1)));
        }
    }
    if let Some(stem) = out.stem {
        let s = g.shape(stem);
        if (s.n, s.h, s.w) != (input.n, input.h / 2, input.w / 2) {
            return Err(Error::Shape(format!("encoder stem is {s}, expected stride 2 of {input}")));
        }
    }
    Ok(())
}

/// Small CPU-friendly backbone: a stride-4 stem (two stride-2 convolutions)
/// followed by four stages of two 3x3 convolutions each; stages 2-4 open with
/// a stride-2 convolution.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    stem: [ConvBn; 2],
    stages: Vec<[ConvBn; 2]>,
}

impl ToyEncoder {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let [c1, ..] = TOY_CHANNELS;
        let stem = [
            ConvBn::new(store, rng, "encoder.stem.0", 3, c1, (3, 3), ConvSpec::strided(3, 2), true),
            ConvBn::new(store, rng, "encoder.stem.1", c1, c1, (3, 3), ConvSpec::strided(3, 2), true),
        ];
        let mut stages = Vec::with_capacity(4);
        let mut cin = c1;
        for (i, &cout) in TOY_CHANNELS.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let name = format!("encoder.stage{}", i + 1);
            stages.push([
                ConvBn::new(store, rng, &format!("{name}.0"), cin, cout, (3, 3), ConvSpec::strided(3, stride), true),
                ConvBn::block3(store, rng, &format!("{name}.1"), cout, cout),
            ]);
            cin = cout;
        }
        Self { stem, stages }
    }
}

impl<T: Element> Encoder<T> for ToyEncoder {
    fn channels(&self) -> [usize; 4] {
        TOY_CHANNELS
    }

    fn stem_channels(&self) -> Option<usize> {
        Some(TOY_CHANNELS[0])
    }

    fn forward(&self, ctx: &Ctx<T>, image: Var) -> Result<EncoderOutput> {
        let input = ctx.graph().shape(image);
        check_input(input)?;
        let stem = self.stem[0].forward(ctx, image);
        let mut x = self.stem[1].forward(ctx, stem);
        let mut outs = Vec::with_capacity(4);
        for [a, b] in &self.stages {
            x = b.forward(ctx, a.forward(ctx, x));
            outs.push(x);
        }
        let out = EncoderOutput { stages: [outs[0], outs[1], outs[2], outs[3]], stem: Some(stem) };
        validate_output(ctx, input, TOY_CHANNELS, &out)?;
        Ok(out)
    }
}
