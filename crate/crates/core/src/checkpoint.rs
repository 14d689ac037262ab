//! Checkpoint directories.
//!
//! `config.json` (model config), `params.json` (parameter manifest),
//! `vocab.json`, `char_bags.json` when char n-grams are on, and optionally
//! `optim.json`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::Vocabulary;
use crate::encoder::EmbeddingInit;
use crate::error::{IramError, Result};
use crate::model::Model;
use crate::optim::OptimState;
use crate::params::Params;
use crate::tensor::Tensor;

pub struct Checkpoint {
    pub model: Model,
    pub params: Params,
    pub vocab: Vocabulary,
    pub optim: Option<OptimState>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IramError::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| IramError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IramError::json(path, e))
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    params: &Params,
    vocab: &Vocabulary,
    optim: Option<&OptimState>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| IramError::io(dir, e))?;
    write_json(&dir.join("config.json"), &model.config)?;
    params.save(&dir.join("params.json"))?;
    vocab.save(&dir.join("vocab.json"))?;
    if model.encoder.char_table.is_some() {
        write_json(&dir.join("char_bags.json"), &model.encoder.char_bags)?;
    }
    if let Some(o) = optim {
        o.save(&dir.join("optim.json"))?;
    }
    Ok(())
}

fn shape_of(params: &Params, path: &str) -> Result<Vec<usize>> {
    params
        .find(path)
        .map(|id| params.get(id).shape().to_vec())
        .ok_or_else(|| IramError::Incompatible(format!("checkpoint has no parameter {path}")))
}

/// Rebuilds the model from its config and checks every stored parameter
/// against the expected paths and shapes.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config: ModelConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let stored = Params::load(&dir.join("params.json"))?;
    let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
    let word_shape = shape_of(&stored, "encoder.word_embeddings")?;
    if word_shape != [vocab.len(), config.word_dim] {
        return Err(IramError::Incompatible(format!(
            "word table {word_shape:?} does not fit vocabulary of {} and word_dim {}",
            vocab.len(),
            config.word_dim
        )));
    }
    let chars = if config.uses_char_ngrams() {
        let shape = shape_of(&stored, "encoder.char_embeddings")?;
        let bags: Vec<Vec<usize>> = read_json(&dir.join("char_bags.json"))?;
        Some((Tensor::zeros(shape), bags))
    } else {
        None
    };
    let init = EmbeddingInit {
        words: Tensor::zeros(word_shape),
        chars,
    };
    let (model, mut params) = Model::build(config, init, &mut ChaCha8Rng::seed_from_u64(0))?;
    params.copy_values_from(&stored)?;
    let optim_path = dir.join("optim.json");
    let optim = if optim_path.exists() {
        Some(OptimState::load(&optim_path)?)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        params,
        vocab,
        optim,
    })
}
