use serde::{Deserialize, Serialize};

use crate::attention::IramConfig;
use crate::error::{IramError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Vanilla,
    Full,
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Attention iterations `T`.
    pub iterations: usize,
    /// Overlap penalty strength `γ`.
    pub gamma: f64,
    pub word_dim: usize,
    pub char_dim: usize,
    /// BiLSTM output width `d_h` (both directions); also the query width `d_q`.
    pub hidden_size: usize,
    pub l_ctx: usize,
    pub l_query: usize,
    pub num_classes: usize,
    pub maxout_width: usize,
    pub maxout_pool: usize,
    pub maxout_layers: usize,
    pub embedding_dropout: f64,
    pub recurrent_dropout: f64,
    pub classifier_dropout: f64,
    pub char_ngrams: bool,
    pub embedding_finetune: bool,
    pub query_finetune: bool,
    pub trainable_embeddings: bool,
    pub batch_size: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Full,
            iterations: 3,
            gamma: 0.0003,
            word_dim: 300,
            char_dim: 100,
            hidden_size: 400,
            l_ctx: 2,
            l_query: 1,
            num_classes: 2,
            maxout_width: 200,
            maxout_pool: 4,
            maxout_layers: 2,
            embedding_dropout: 0.1,
            recurrent_dropout: 0.1,
            classifier_dropout: 0.1,
            char_ngrams: true,
            embedding_finetune: true,
            query_finetune: true,
            trainable_embeddings: false,
            batch_size: 32,
            init_std: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn vanilla() -> Self {
        ModelConfig {
            encoder: EncoderKind::Vanilla,
            l_ctx: 1,
            l_query: 0,
            char_ngrams: false,
            embedding_finetune: false,
            query_finetune: false,
            ..ModelConfig::default()
        }
    }

    /// Vanilla encoder with 32-wide layers and init std 0.1, sized for the
    /// synthetic task.
    pub fn desk_scale() -> Self {
        ModelConfig {
            word_dim: 32,
            hidden_size: 32,
            maxout_width: 32,
            init_std: 0.1,
            ..ModelConfig::vanilla()
        }
    }

    pub fn iram(&self) -> IramConfig {
        IramConfig {
            iterations: self.iterations,
            gamma: self.gamma,
        }
    }

    /// Width of the per-token vectors entering the BiLSTM.
    pub fn embedding_width(&self) -> usize {
        if self.uses_char_ngrams() {
            self.word_dim + self.char_dim
        } else {
            self.word_dim
        }
    }

    pub fn uses_char_ngrams(&self) -> bool {
        self.encoder == EncoderKind::Full && self.char_ngrams
    }

    pub fn bilstm_layers(&self) -> usize {
        match self.encoder {
            EncoderKind::Vanilla => 1,
            EncoderKind::Full => self.l_ctx + self.l_query,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.iram().validate()?;
        let positive = [
            ("word_dim", self.word_dim),
            ("hidden_size", self.hidden_size),
            ("num_classes", self.num_classes),
            ("maxout_width", self.maxout_width),
            ("maxout_pool", self.maxout_pool),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(IramError::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(2) {
            return Err(IramError::Config("hidden_size must be even (two directions)".into()));
        }
        if self.uses_char_ngrams() && self.char_dim == 0 {
            return Err(IramError::Config("char_dim must be positive with char n-grams".into()));
        }
        if self.encoder == EncoderKind::Full && self.l_ctx == 0 {
            return Err(IramError::Config("l_ctx must be at least 1".into()));
        }
        for (name, p) in [
            ("embedding_dropout", self.embedding_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("classifier_dropout", self.classifier_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(IramError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.init_std.is_nan() || self.init_std <= 0.0 {
            return Err(IramError::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}
