#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iram::data::synthetic::{generate_synthetic, SyntheticGrammar};
use iram::data::{Example, Vocabulary};
use iram::run::embedding_init;
use iram::train::{EvalMetrics, Trainer};
use iram::{Execution, Model, ModelConfig, OptimConfig, Params};

/// First `train` examples for training, the next `test` for testing.
pub fn synthetic_splits(seed: u64, train: usize, test: usize) -> (Vec<Example>, Vec<Example>, Vocabulary) {
    let mut all = generate_synthetic(&SyntheticGrammar::with_seed(seed), train + test).unwrap();
    let test = all.split_off(train);
    let vocab = Vocabulary::from_examples(&all, 1);
    (all, test, vocab)
}

pub fn build(config: ModelConfig, vocab: &Vocabulary, seed: u64) -> (Model, Params) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = embedding_init(&config, vocab, None, None, &mut rng).unwrap();
    Model::build(config, init, &mut rng).unwrap()
}

pub fn trainer(config: ModelConfig, vocab: &Vocabulary, seed: u64) -> Trainer {
    let (model, params) = build(config, vocab, seed);
    Trainer::new(model, params, OptimConfig::default(), seed, Execution::Parallel).unwrap()
}

/// Test-set metrics after every epoch.
pub fn train_epochs(
    config: ModelConfig,
    seed: u64,
    epochs: usize,
    train: &[Example],
    test: &[Example],
    vocab: &Vocabulary,
) -> Vec<EvalMetrics> {
    let mut t = trainer(config, vocab, seed);
    (0..epochs)
        .map(|_| {
            t.train_epoch(train, vocab).unwrap();
            t.evaluate(test, vocab).unwrap()
        })
        .collect()
}

/// `Σ_{i≠j} Σ_k A[i][k] A[j][k]` by explicit loops.
#[allow(clippy::needless_range_loop)]
pub fn overlap_oracle(rows: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i == j {
                continue;
            }
            for k in 0..rows[i].len() {
                total += rows[i][k] * rows[j][k];
            }
        }
    }
    total
}
