//! The segmentation network: encoder, boundary generation module (BDGM) and
//! boundary-guided decoder (BDGD).
//!
//! The BDGM predicts a boundary distribution map from the three deepest
//! encoder stages. The decoder multiplies its features by that map at every
//! stage, so training the map against the ideal one steers the decoder toward
//! the polyp boundary.

mod aggregate;
mod bdgm;
mod decoder;
mod encoder;
mod rfb;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregate::Aggregate;
pub use bdgm::{Bdgm, BdgmOutput};
pub use decoder::{BdgdA, BdgdB, Decoder, DecoderBlock, DecoderInputs, DecoderStage, Gate, PlainBlock};
pub use encoder::{validate_output, Encoder, EncoderOutput, ToyEncoder, STAGE_STRIDES, TOY_CHANNELS};
pub use rfb::Rfb;

use crate::autograd::{Element, Graph, Shape, Tensor, Var};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::{Error, Result};

/// Which backbone [`BdgNet::new`] builds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// The built-in small convolutional encoder.
    #[default]
    Toy,
    /// A caller-supplied [`Encoder`], passed to [`BdgNet::with_encoder`].
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub encoder_kind: EncoderKind,
    /// Common channel width of the boundary module and decoder.
    pub decoder_channels: usize,
    /// Decoder levels (1..=4) that receive an encoder skip and therefore use
    /// the skip-connected block; the remaining levels use the skip-free block.
    pub skip_levels: Vec<u8>,
    /// Width of the Gaussian in the ideal boundary map used as supervision.
    pub sigma: f64,
    /// Square training and inference resolution; a multiple of 32.
    pub input_size: usize,
    /// Build the boundary module. Without it the decoder gate is all ones.
    pub use_bdgm: bool,
    /// Use boundary-guided decoder blocks. Without them every stage is a
    /// plain upsample-and-add block.
    pub use_bdgd: bool,
    /// Stop decoder gradients from reaching the boundary module.
    pub detach_gate: bool,
    pub align_corners: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder_kind: EncoderKind::Toy,
            decoder_channels: 32,
            skip_levels: vec![3, 4],
            sigma: 5.0,
            input_size: 352,
            use_bdgm: true,
            use_bdgd: true,
            detach_gate: false,
            align_corners: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decoder_channels == 0 {
            return Err(Error::Config("decoder_channels must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive and finite, got {}", self.sigma)));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!("input_size {} is not a positive multiple of 32", self.input_size)));
        }
        if self.skip_levels.is_empty() {
            return Err(Error::Config("skip_levels must name at least one decoder level".into()));
        }
        let mut seen = [false; 5];
        for &l in &self.skip_levels {
            if !(1..=4).contains(&l) {
                return Err(Error::Config(format!("skip level {l} is outside 1..=4")));
            }
            if std::mem::replace(&mut seen[l as usize], true) {
                return Err(Error::Config(format!("skip level {l} is listed twice")));
            }
        }
        Ok(())
    }

    /// Number of decoder stages that use the skip-connected block.
    pub fn bdgd_a_stages(&self) -> usize {
        if self.use_bdgd {
            self.skip_levels.len()
        } else {
            0
        }
    }
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// Segmentation logits `(N, 1, H, W)`.
    pub logits: Var,
    pub encoder: EncoderOutput,
    pub bdgm: Option<BdgmOutput>,
    /// Decoder stage outputs, deepest first.
    pub decoder_stages: Vec<Var>,
}

impl NetworkOutput {
    /// Predicted boundary distribution map, when the boundary module exists.
    pub fn bdm(&self) -> Option<Var> {
        self.bdgm.map(|b| b.bdm)
    }
}

/// Eval-mode predictions as plain tensors.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    /// Segmentation probabilities `(N, 1, H, W)`.
    pub mask: Tensor<T>,
    pub bdm: Option<Tensor<T>>,
}

pub struct BdgNet<T: Element> {
    config: NetworkConfig,
    store: ParamStore<T>,
    encoder: Box<dyn Encoder<T>>,
    bdgm: Option<Bdgm>,
    decoder: Decoder,
}

impl<T: Element> std::fmt::Debug for BdgNet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BdgNet").field("config", &self.config).field("params", &self.store.len()).finish_non_exhaustive()
    }
}

impl<T: Element> BdgNet<T> {
    /// Builds the network on the toy encoder with weights drawn from `seed`.
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        if config.encoder_kind == EncoderKind::External {
            return Err(Error::Config("an external encoder must be supplied through BdgNet::with_encoder".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = ToyEncoder::new(&mut store, &mut rng);
        Self::with_encoder(config, store, Box::new(encoder), &mut rng)
    }

    /// Builds the heads on top of `encoder`, whose parameters already live in `store`.
    pub fn with_encoder(
        config: &NetworkConfig,
        mut store: ParamStore<T>,
        encoder: Box<dyn Encoder<T>>,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        config.validate()?;
        let ch = encoder.channels();
        let width = config.decoder_channels;
        let bdgm = config.use_bdgm.then(|| Bdgm::new(&mut store, rng, [ch[1], ch[2], ch[3]], width));
        let decoder = Decoder::new(&mut store, rng, ch, encoder.stem_channels(), &config.skip_levels, width, config.use_bdgd)?;
        Ok(Self { config: config.clone(), store, encoder, bdgm, decoder })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoder(&self) -> &dyn Encoder<T> {
        self.encoder.as_ref()
    }

    pub fn bdgm(&self) -> Option<&Bdgm> {
        self.bdgm.as_ref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Decoder gate derived from the boundary module output.
    pub fn gate(&self, ctx: &Ctx<T>, bdgm: Option<&BdgmOutput>) -> Gate {
        match bdgm {
            Some(b) if self.config.detach_gate => Gate::Map(ctx.graph().detach(b.bdm)),
            Some(b) => Gate::Map(b.bdm),
            None => Gate::Identity,
        }
    }

    pub fn forward(&self, ctx: &Ctx<T>, image: Var) -> Result<NetworkOutput> {
        self.forward_with_gate(ctx, image, None)
    }

    /// Forward pass whose decoder gate is `gate` instead of the boundary
    /// module's prediction, when given. The boundary module still runs.
    pub fn forward_with_gate(&self, ctx: &Ctx<T>, image: Var, gate: Option<Gate>) -> Result<NetworkOutput> {
        let input = ctx.graph().shape(image);
        let enc = self.encoder.forward(ctx, image)?;
        validate_output(ctx, input, self.encoder.channels(), &enc)?;
        let [_, e2, e3, e4] = enc.stages;
        let bdgm = match &self.bdgm {
            Some(m) => Some(m.forward(ctx, e2, e3, e4, self.config.align_corners)?),
            None => None,
        };
        let gate = gate.unwrap_or_else(|| self.gate(ctx, bdgm.as_ref()));
        let inputs = DecoderInputs { stages: enc.stages, stem: enc.stem };
        let (logits, decoder_stages) = self.decoder.forward(ctx, inputs, gate, self.config.align_corners)?;
        Ok(NetworkOutput { logits, encoder: enc, bdgm, decoder_stages })
    }

    /// Eval-mode forward pass over a `(N, 3, H, W)` batch.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Prediction<T>> {
        let graph = Graph::new();
        let ctx = Ctx::new(&graph, &self.store, Mode::Eval);
        let image = graph.constant(images.clone());
        let out = self.forward(&ctx, image)?;
        let prob = graph.sigmoid(out.logits);
        Ok(Prediction { mask: (*graph.value(prob)).clone(), bdm: out.bdm().map(|b| (*graph.value(b)).clone()) })
    }
}

/// FLOPs of one forward pass, split by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopsBreakdown {
    pub encoder: u64,
    pub bdgm: u64,
    pub decoder: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.encoder + self.bdgm + self.decoder
    }
}

/// Analytic FLOPs of one `1 x 3 x S x S` forward pass of `net`, with
/// `S = config.input_size`.
///
/// Conventions: a convolution costs `2 * C_in * k_h * k_w` per output element
/// plus one for a bias; batch normalization 2, element-wise ops 1, bilinear
/// resampling 8 and 2x2 average pooling 4 per output element; concatenation
/// and reshaping are free.
pub fn flops_breakdown<T: Element>(net: &BdgNet<T>) -> Result<FlopsBreakdown> {
    let size = net.config.input_size;
    let graph = Graph::<T>::dry_run();
    let ctx = Ctx::new(&graph, &net.store, Mode::Eval);
    let image = graph.placeholder(Shape::new(1, 3, size, size), false);
    let enc = net.encoder.forward(&ctx, image)?;
    let encoder = graph.flops();
    let [_, e2, e3, e4] = enc.stages;
    let bdgm = match &net.bdgm {
        Some(m) => Some(m.forward(&ctx, e2, e3, e4, net.config.align_corners)?),
        None => None,
    };
    let after_bdgm = graph.flops();
    let gate = net.gate(&ctx, bdgm.as_ref());
    let inputs = DecoderInputs { stages: enc.stages, stem: enc.stem };
    net.decoder.forward(&ctx, inputs, gate, net.config.align_corners)?;
    Ok(FlopsBreakdown { encoder, bdgm: after_bdgm - encoder, decoder: graph.flops() - after_bdgm })
}

/// Total analytic FLOPs of the network described by `config` at its input size.
pub fn count_flops(config: &NetworkConfig) -> Result<u64> {
    let net = BdgNet::<f32>::new(config, 0)?;
    Ok(flops_breakdown(&net)?.total())
}
