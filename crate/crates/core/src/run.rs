//! Run configuration, dataset selection and embedding setup.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::embeddings::{ngram_bags, ngram_inventory, word_table, Pretrained};
use crate::data::imdb::{load_imdb, split_validation, MAX_TOKENS};
use crate::data::sst::{load_sst, SstMode};
use crate::data::synthetic::{generate_synthetic, SyntheticGrammar};
use crate::data::{check_labels, Example, Vocabulary};
use crate::encoder::{EmbeddingInit, FIRST_WORD_ID};
use crate::error::{IramError, Result};
use crate::model::Model;
use crate::optim::OptimConfig;
use crate::par::Execution;
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sst2,
    Sst5,
    Imdb,
    Synthetic,
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Sst5 => 5,
            _ => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| IramError::Config(format!("unknown dataset {s:?}; expected sst2, sst5, imdb or synthetic")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSplits {
    pub grammar: SyntheticGrammar,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SyntheticSplits {
    fn default() -> Self {
        SyntheticSplits {
            grammar: SyntheticGrammar::default(),
            train: 2000,
            valid: 500,
            test: 500,
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub dataset: DatasetKind,
    pub seed: u64,
    pub epochs: usize,
    pub out: PathBuf,
    /// Dataset root; `sst/{train,dev,test}.txt`, `imdb/{train,test}/{pos,neg}`.
    pub data_dir: Option<PathBuf>,
    /// Pretrained word vectors in text format; random vectors when absent.
    pub word_vectors: Option<PathBuf>,
    /// Pretrained character n-gram vectors; random vectors when absent.
    pub char_vectors: Option<PathBuf>,
    /// Train on every labelled SST phrase instead of whole sentences only.
    pub phrase_labels: bool,
    pub max_tokens: usize,
    pub validation_fraction: f64,
    pub min_count: usize,
    pub synthetic: SyntheticSplits,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            dataset: DatasetKind::Synthetic,
            seed: 0,
            epochs: 20,
            out: PathBuf::from("runs/default"),
            data_dir: None,
            word_vectors: None,
            char_vectors: None,
            phrase_labels: false,
            max_tokens: MAX_TOKENS,
            validation_fraction: 0.1,
            min_count: 1,
            synthetic: SyntheticSplits::default(),
            execution: Execution::Parallel,
        }
    }
}

impl RunConfig {
    /// Freshly initialized model for `vocab`, seeded from `self.seed`.
    pub fn build_model(&self, vocab: &Vocabulary) -> Result<(Model, Params)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let init = embedding_init(
            &self.model,
            vocab,
            self.word_vectors.as_deref(),
            self.char_vectors.as_deref(),
            &mut rng,
        )?;
        Model::build(self.model.clone(), init, &mut rng)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| IramError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| IramError::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| IramError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.model.num_classes != self.dataset.num_classes() {
            return Err(IramError::Config(format!(
                "num_classes {} does not match dataset {:?} ({} classes)",
                self.model.num_classes,
                self.dataset,
                self.dataset.num_classes()
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(IramError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.epochs == 0 {
            return Err(IramError::Config("epochs must be positive".into()));
        }
        Ok(())
    }

    fn data_root(&self) -> Result<&Path> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| IramError::Config(format!("dataset {:?} needs a data directory", self.dataset)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[Example]> {
        match name {
            "train" => Ok(&self.train),
            "valid" | "dev" => Ok(&self.valid),
            "test" => Ok(&self.test),
            _ => Err(IramError::Config(format!("unknown split {name:?}"))),
        }
    }
}

pub fn load_splits(run: &RunConfig) -> Result<Splits> {
    let splits = match run.dataset {
        DatasetKind::Sst2 | DatasetKind::Sst5 => {
            let mode = if run.dataset == DatasetKind::Sst2 {
                SstMode::Binary
            } else {
                SstMode::FineGrained
            };
            let dir = run.data_root()?.join("sst");
            Splits {
                train: load_sst(&dir.join("train.txt"), mode, run.phrase_labels)?,
                valid: load_sst(&dir.join("dev.txt"), mode, false)?,
                test: load_sst(&dir.join("test.txt"), mode, false)?,
            }
        }
        DatasetKind::Imdb => {
            let dir = run.data_root()?.join("imdb");
            let all = load_imdb(&dir.join("train"), run.max_tokens)?;
            let (train, valid) = split_validation(all, run.validation_fraction, run.seed);
            Splits {
                train,
                valid,
                test: load_imdb(&dir.join("test"), run.max_tokens)?,
            }
        }
        DatasetKind::Synthetic => {
            let s = &run.synthetic;
            let mut all = generate_synthetic(&s.grammar, s.train + s.valid + s.test)?;
            let test = all.split_off(s.train + s.valid);
            let valid = all.split_off(s.train);
            Splits { train: all, valid, test }
        }
    };
    for part in [&splits.train, &splits.valid, &splits.test] {
        check_labels(part, run.dataset.num_classes())?;
    }
    Ok(splits)
}

/// Word table and, when the config uses them, character n-gram table and
/// bags for `vocab`. Missing files fall back to standardized random vectors.
pub fn embedding_init<R: Rng + ?Sized>(
    config: &ModelConfig,
    vocab: &Vocabulary,
    word_vectors: Option<&Path>,
    char_vectors: Option<&Path>,
    rng: &mut R,
) -> Result<EmbeddingInit> {
    let pretrained = match word_vectors {
        Some(p) => Pretrained::load(p)?,
        None => Pretrained::random(vocab.tokens()[FIRST_WORD_ID..].to_vec(), config.word_dim, rng),
    };
    if pretrained.dim != config.word_dim {
        return Err(IramError::Config(format!(
            "word vectors have dimension {}, config expects {}",
            pretrained.dim, config.word_dim
        )));
    }
    let words = word_table(vocab, &pretrained)?;
    let chars = if config.uses_char_ngrams() {
        let inventory = match char_vectors {
            Some(p) => Pretrained::load(p)?,
            None => Pretrained::random(ngram_inventory(vocab), config.char_dim, rng),
        };
        if inventory.dim != config.char_dim || inventory.tokens.is_empty() {
            return Err(IramError::Config(format!(
                "char vectors have dimension {}, config expects {}",
                inventory.dim, config.char_dim
            )));
        }
        let bags = ngram_bags(vocab, &inventory);
        let table = Tensor::new(vec![inventory.tokens.len(), inventory.dim], inventory.values)?;
        Some((table, bags))
    } else {
        None
    };
    Ok(EmbeddingInit { words, chars })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut run = RunConfig::default();
        run.model.gamma = 0.0;
        run.seed = 42;
        run.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), run);
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"gama": 1.0}}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn synthetic_splits_have_requested_sizes() {
        let run = RunConfig {
            synthetic: SyntheticSplits {
                train: 30,
                valid: 5,
                test: 7,
                ..SyntheticSplits::default()
            },
            ..RunConfig::default()
        };
        let s = load_splits(&run).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (30, 5, 7));
    }

    #[test]
    fn class_count_must_match_dataset() {
        let mut run = RunConfig {
            dataset: DatasetKind::Sst5,
            ..RunConfig::default()
        };
        assert!(run.validate().is_err());
        run.model.num_classes = 5;
        run.validate().unwrap();
        assert_eq!(DatasetKind::parse("imdb").unwrap(), DatasetKind::Imdb);
        assert!(DatasetKind::parse("mnist").is_err());
    }
}
