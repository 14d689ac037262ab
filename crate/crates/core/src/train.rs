//! Mini-batch training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Example, Vocabulary};
use crate::error::{IramError, Result};
use crate::model::{argmax, Model};
use crate::optim::{global_norm, OptimConfig, OptimState};
use crate::par::{derive_seed, Execution};
use crate::params::Params;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Loss and accuracy over a labelled split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub ce: f64,
    pub penalty: f64,
    /// Mean over examples of `Σ_{i≠j} [A Aᵀ]_{ij} / (T (T - 1))`.
    pub mean_overlap: f64,
    pub count: usize,
}

/// One line of the JSONL metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub ce: f64,
    pub penalty: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    pub fn new(epoch: usize, split: &str, m: &EvalMetrics) -> Self {
        MetricsRecord {
            epoch,
            split: split.to_string(),
            loss: m.loss,
            ce: m.ce,
            penalty: m.penalty,
            accuracy: m.accuracy,
        }
    }
}

/// Eval-mode metrics, batched by `batch_size`.
pub fn evaluate(
    model: &Model,
    params: &Params,
    examples: &[Example],
    vocab: &Vocabulary,
    batch_size: usize,
    exec: Execution,
) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(IramError::EmptyInput("evaluate"));
    }
    let mut m = EvalMetrics::default();
    let mut correct = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::from_examples(chunk, vocab)?;
        let f = model.forward(params, &batch, false, 0, exec)?;
        let k = chunk.len() as f64;
        m.ce += f.cross_entropy * k;
        m.penalty += f.penalty * k;
        for ((logits, trace), label) in f.logits.iter().zip(&f.traces).zip(&batch.labels) {
            correct += usize::from(argmax(logits) == *label);
            m.mean_overlap += trace.mean_offdiag_overlap();
        }
    }
    let n = examples.len() as f64;
    m.count = examples.len();
    m.ce /= n;
    m.penalty /= n;
    m.loss = m.ce + m.penalty;
    m.mean_overlap /= n;
    m.accuracy = correct as f64 / n;
    Ok(m)
}

pub struct Trainer {
    pub model: Model,
    pub params: Params,
    pub optim: OptimState,
    pub exec: Execution,
    seed: u64,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, params: Params, optim: OptimConfig, seed: u64, exec: Execution) -> Result<Self> {
        let optim = OptimState::new(optim, &params)?;
        Ok(Trainer {
            model,
            params,
            optim,
            exec,
            seed,
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)),
        })
    }

    /// One optimizer step on `batch`. Dropout masks depend on the run seed
    /// and the global step count only.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let step_seed = derive_seed(self.seed, self.optim.step);
        let (f, mut grads) = self.model.loss_and_grad(&self.params, batch, step_seed, self.exec)?;
        let grad_norm = global_norm(&grads);
        self.optim.step(&mut self.params, &mut grads)?;
        Ok(StepStats {
            total: f.total,
            cross_entropy: f.cross_entropy,
            penalty: f.penalty,
            grad_norm,
        })
    }

    /// One shuffled pass; returns the example-weighted mean step stats.
    pub fn train_epoch(&mut self, examples: &[Example], vocab: &Vocabulary) -> Result<StepStats> {
        if examples.is_empty() {
            return Err(IramError::EmptyInput("train_epoch"));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut acc = StepStats {
            total: 0.0,
            cross_entropy: 0.0,
            penalty: 0.0,
            grad_norm: 0.0,
        };
        let mut steps = 0.0;
        for chunk in order.chunks(self.model.config.batch_size.max(1)) {
            let batch = Batch::from_examples(chunk.iter().map(|&i| &examples[i]), vocab)?;
            let s = self.train_step(&batch)?;
            let k = chunk.len() as f64;
            acc.total += s.total * k;
            acc.cross_entropy += s.cross_entropy * k;
            acc.penalty += s.penalty * k;
            acc.grad_norm += s.grad_norm;
            steps += 1.0;
        }
        let n = examples.len() as f64;
        acc.total /= n;
        acc.cross_entropy /= n;
        acc.penalty /= n;
        acc.grad_norm /= steps;
        Ok(acc)
    }

    pub fn evaluate(&self, examples: &[Example], vocab: &Vocabulary) -> Result<EvalMetrics> {
        evaluate(
            &self.model,
            &self.params,
            examples,
            vocab,
            self.model.config.batch_size,
            self.exec,
        )
    }
}
