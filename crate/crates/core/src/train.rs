//! Training loop: seeded batch sampling and augmentation, the total loss,
//! Adam updates and running-statistic updates.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor};
use crate::config::RunConfig;
use crate::data::{stack_batch, Batch, PreparedSample, Transform};
use crate::losses::{l_total, LossValues};
use crate::network::BdgNet;
use crate::nn::{Ctx, Mode, ParamId, ParamKind};
use crate::optim::Adam;
use crate::{Error, Result};

pub const LOG_HEADER: &str = "iter,total,bdm,wbce,wiou";

/// Loss components of one iteration; `total` is their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: LossValues,
}

impl LogRow {
    /// CSV line with shortest round-trip float formatting, so parsed
    /// components add up to the parsed total exactly.
    pub fn to_csv(&self) -> String {
        let l = self.loss;
        format!("{},{},{},{},{}", self.iteration, l.total, l.bdm, l.wbce, l.wiou)
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Stateful trainer over a fixed set of prepared samples.
pub struct Trainer {
    config: RunConfig,
    net: BdgNet<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
}

impl Trainer {
    /// A freshly initialised network seeded from `config.seed`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let net = BdgNet::new(&config.network, config.seed)?;
        Ok(Self::with_network(config, net))
    }

    pub fn with_network(config: &RunConfig, net: BdgNet<f32>) -> Self {
        Self {
            config: config.clone(),
            net,
            adam: Adam::new(config.optimizer.adam()),
            // Separate stream from weight initialisation.
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
        }
    }

    pub fn net(&self) -> &BdgNet<f32> {
        &self.net
    }

    pub fn into_net(self) -> BdgNet<f32> {
        self.net
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Indices of the next batch: epochs are reshuffled, batches never repeat
    /// a sample, and a batch is capped at the dataset size.
    fn next_indices(&mut self, len: usize) -> Vec<usize> {
        let size = self.config.optimizer.batch_size.min(len);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order = (0..len).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }

    pub fn next_batch(&mut self, samples: &[PreparedSample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        let idx = self.next_indices(samples.len());
        let aug = self.config.data.augment;
        let transforms: Vec<Transform> = idx.iter().map(|_| aug.sample(&mut self.rng)).collect();
        let picked: Vec<&PreparedSample> = idx.iter().map(|&i| &samples[i]).collect();
        stack_batch(&picked, &transforms, &self.config.bdm_options())
    }

    /// One optimisation step on the next batch.
    pub fn step(&mut self, samples: &[PreparedSample]) -> Result<LogRow> {
        let batch = self.next_batch(samples)?;
        self.step_on(&batch)
    }

    pub fn step_on(&mut self, batch: &Batch) -> Result<LogRow> {
        self.iteration += 1;
        let (values, grads, updates) = {
            let g = Graph::new();
            let ctx = Ctx::new(&g, self.net.store(), Mode::Train);
            let x = g.constant(batch.images.clone());
            let out = self.net.forward(&ctx, x)?;
            let terms = l_total(&g, out.logits, out.bdm(), &batch.masks, &batch.bdms, &self.config.loss)?;
            let values = terms.values(&g);
            if ![values.total, values.bdm, values.wbce, values.wiou].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { iteration: self.iteration, ids: batch.ids.clone() });
            }
            let mut gr = g.backward(terms.total);
            let store = self.net.store();
            let grads: Vec<(ParamId, Tensor<f32>)> = ctx
                .param_vars()
                .into_iter()
                .filter(|(id, _)| store.param(*id).kind == ParamKind::Weight)
                .filter_map(|(id, v)| gr.take(v).map(|t| (id, t)))
                .collect();
            (values, grads, ctx.take_bn_updates())
        };
        if grads.iter().any(|(_, t)| t.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { iteration: self.iteration, ids: batch.ids.clone() });
        }
        self.adam.step(self.net.store_mut(), &grads);
        self.net.store_mut().apply_bn_updates(&updates);
        Ok(LogRow { iteration: self.iteration, loss: values })
    }
}

/// Runs `config.optimizer.iterations` steps, calling `on_row` after each.
pub fn train(
    config: &RunConfig,
    samples: &[PreparedSample],
    mut on_row: impl FnMut(&LogRow, &Trainer) -> Result<()>,
) -> Result<(BdgNet<f32>, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config)?;
    let mut rows = Vec::with_capacity(config.optimizer.iterations);
    for _ in 0..config.optimizer.iterations {
        let row = trainer.step(samples)?;
        on_row(&row, &trainer)?;
        rows.push(row);
    }
    Ok((trainer.into_net(), rows))
}
