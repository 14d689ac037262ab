//! Encoder, iterative attention and maxout classifier assembled into one model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{iterate, penalty_on_tape, AttentionOutput, AttentionParams, AttentionTrace};
use crate::config::ModelConfig;
use crate::data::Batch;
use crate::encoder::{EmbeddingInit, Encoder};
use crate::error::{IramError, Result};
use crate::nn::Maxout;
use crate::par::{derive_seed, Execution};
use crate::params::{Ctx, GradBuffer, Params};
use crate::tensor::Var;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub attention: AttentionParams,
    pub classifier: Maxout,
}

/// Graph handles for one example.
pub struct ExampleGraph {
    pub logits: Var,
    pub attention: AttentionOutput,
}

/// Batch-level forward values.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub logits: Vec<Vec<f64>>,
    pub traces: Vec<AttentionTrace>,
    /// `cross_entropy + penalty`.
    pub total: f64,
    /// Mean over the batch.
    pub cross_entropy: f64,
    /// Mean per-sequence penalty, already scaled by `γ`.
    pub penalty: f64,
}

struct ExampleResult {
    logits: Vec<f64>,
    trace: AttentionTrace,
    cross_entropy: f64,
    penalty: f64,
    grads: Option<GradBuffer>,
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Registers every parameter and returns the model with its store.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, init: EmbeddingInit, rng: &mut R) -> Result<(Model, Params)> {
        config.validate()?;
        let mut params = Params::new();
        let encoder = Encoder::new(&mut params, &config, init, rng)?;
        let d = config.hidden_size;
        let attention = AttentionParams::new(&mut params, "attention", d, d, config.init_std, rng)?;
        let classifier = Maxout::new(
            &mut params,
            "classifier",
            d,
            config.maxout_width,
            config.maxout_pool,
            config.maxout_layers,
            config.num_classes,
            config.init_std,
            rng,
        )?;
        let model = Model {
            config,
            encoder,
            attention,
            classifier,
        };
        Ok((model, params))
    }

    /// Logits for `ids` (no padding). The classifier sees only the last summary.
    pub fn forward_example(&self, ctx: &mut Ctx<'_>, ids: &[usize]) -> Result<ExampleGraph> {
        let enc = self.encoder.encode(ctx, ids, ids.len())?;
        let mask = vec![true; ids.len()];
        let attention = iterate(ctx, &enc.states, &mask, enc.query, &self.attention, &self.config.iram())?;
        let logits = self
            .classifier
            .forward(ctx, attention.final_summary(), self.config.classifier_dropout)?;
        Ok(ExampleGraph { logits, attention })
    }

    fn run_example(
        &self,
        params: &Params,
        batch: &Batch,
        i: usize,
        train: bool,
        seed: u64,
        with_grad: bool,
    ) -> Result<ExampleResult> {
        let label = batch.labels[i];
        if label >= self.config.num_classes {
            return Err(IramError::Data(format!(
                "label {label} outside 0..{}",
                self.config.num_classes
            )));
        }
        let ids = &batch.ids[i][..batch.lengths[i]];
        let mut ctx = Ctx::new(params, train, derive_seed(seed, i as u64));
        let g = self.forward_example(&mut ctx, ids)?;
        let ce = ctx.tape.cross_entropy(g.logits, label)?;
        let pen = penalty_on_tape(&mut ctx.tape, &g.attention.rows, g.attention.n_inputs, self.config.gamma)?;
        let loss = ctx.tape.add(ce, pen)?;
        let loss = ctx.tape.scale(loss, 1.0 / batch.len() as f64);
        let grads = if with_grad { Some(ctx.backward(loss)?) } else { None };
        Ok(ExampleResult {
            logits: ctx.tape.value(g.logits).to_vec(),
            trace: g.attention.trace(&ctx.tape),
            cross_entropy: ctx.tape.scalar_value(ce),
            penalty: ctx.tape.scalar_value(pen),
            grads,
        })
    }

    fn run_batch(
        &self,
        params: &Params,
        batch: &Batch,
        train: bool,
        seed: u64,
        with_grad: bool,
        exec: Execution,
    ) -> Result<(ForwardResult, Option<GradBuffer>)> {
        if batch.is_empty() {
            return Err(IramError::EmptyInput("batch"));
        }
        let results = exec.map(batch.len(), |i| self.run_example(params, batch, i, train, seed, with_grad));
        let n = batch.len() as f64;
        let mut out = ForwardResult {
            logits: Vec::with_capacity(batch.len()),
            traces: Vec::with_capacity(batch.len()),
            total: 0.0,
            cross_entropy: 0.0,
            penalty: 0.0,
        };
        let mut grads = with_grad.then(|| GradBuffer::zeros_like(params));
        for r in results {
            let r = r?;
            out.cross_entropy += r.cross_entropy;
            out.penalty += r.penalty;
            out.logits.push(r.logits);
            out.traces.push(r.trace);
            if let (Some(acc), Some(g)) = (grads.as_mut(), r.grads.as_ref()) {
                acc.merge(g);
            }
        }
        out.cross_entropy /= n;
        out.penalty /= n;
        out.total = out.cross_entropy + out.penalty;
        Ok((out, grads))
    }

    /// Forward pass over a batch. Dropout is active only when `train` is set.
    pub fn forward(&self, params: &Params, batch: &Batch, train: bool, seed: u64, exec: Execution) -> Result<ForwardResult> {
        Ok(self.run_batch(params, batch, train, seed, false, exec)?.0)
    }

    /// Training-mode forward plus gradients of the batch-mean loss.
    pub fn loss_and_grad(
        &self,
        params: &Params,
        batch: &Batch,
        seed: u64,
        exec: Execution,
    ) -> Result<(ForwardResult, GradBuffer)> {
        let (f, g) = self.run_batch(params, batch, true, seed, true, exec)?;
        Ok((f, g.expect("gradients requested")))
    }

    pub fn predict(&self, params: &Params, batch: &Batch, exec: Execution) -> Result<Vec<usize>> {
        let f = self.forward(params, batch, false, 0, exec)?;
        Ok(f.logits.iter().map(|l| argmax(l)).collect())
    }

    /// Eval-mode attention trace for one unpadded sequence.
    pub fn trace(&self, params: &Params, ids: &[usize]) -> Result<AttentionTrace> {
        let mut ctx = Ctx::eval(params);
        let g = self.forward_example(&mut ctx, ids)?;
        Ok(g.attention.trace(&ctx.tape))
    }
}
