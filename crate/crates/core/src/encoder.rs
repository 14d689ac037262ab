//! Token encoders producing the attendable states `H` and the initial query `x̂`.
//!
//! The vanilla encoder is a single-layer BiLSTM over word vectors. The full
//! encoder adds averaged character n-gram vectors, a two-layer highway over
//! the embeddings, an `l_ctx + l_query` layer BiLSTM (states from layer
//! `l_ctx`, query from the last layer) and a highway over the query. Each
//! extension can be switched off on its own.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderKind, ModelConfig};
use crate::error::{IramError, Result};
use crate::nn::{BiLstm, Highway};
use crate::params::{Ctx, ParamId, Params};
use crate::tensor::{Tensor, Var};

/// Vocabulary ids below this value (padding, unknown) map to a zero word vector.
pub const FIRST_WORD_ID: usize = 2;

/// Initial embedding tables for a vocabulary.
#[derive(Clone, Debug)]
pub struct EmbeddingInit {
    /// `[vocab, word_dim]`
    pub words: Tensor,
    /// `[inventory, char_dim]` and, per vocabulary id, the inventory rows of
    /// that word's character n-grams.
    pub chars: Option<(Tensor, Vec<Vec<usize>>)>,
}

pub struct EncoderOutput {
    /// One state per (padded) position.
    pub states: Vec<Var>,
    pub query: Var,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub word_table: ParamId,
    pub char_table: Option<ParamId>,
    /// Character n-gram rows per vocabulary id.
    pub char_bags: Vec<Vec<usize>>,
    pub embedding_highway: Option<Highway>,
    pub bilstm: BiLstm,
    pub query_highway: Option<Highway>,
    pub ctx_layers: usize,
    pub embedding_dropout: f64,
    pub recurrent_dropout: f64,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        config: &ModelConfig,
        init: EmbeddingInit,
        rng: &mut R,
    ) -> Result<Self> {
        let std = config.init_std;
        if init.words.shape().len() != 2 || init.words.shape()[1] != config.word_dim {
            return Err(IramError::dim("word embeddings", init.words.shape(), &[config.word_dim]));
        }
        let vocab = init.words.shape()[0];
        let word_table = params.add("encoder.word_embeddings", init.words, config.trainable_embeddings)?;
        let (char_table, char_bags) = match (config.uses_char_ngrams(), init.chars) {
            (true, Some((table, bags))) => {
                if table.shape().get(1) != Some(&config.char_dim) {
                    return Err(IramError::dim("char embeddings", table.shape(), &[config.char_dim]));
                }
                if bags.len() != vocab {
                    return Err(IramError::dim("char n-gram bags", &[vocab], &[bags.len()]));
                }
                let id = params.add("encoder.char_embeddings", table, config.trainable_embeddings)?;
                (Some(id), bags)
            }
            (true, None) => {
                return Err(IramError::Config("char n-grams enabled but no char table given".into()));
            }
            (false, _) => (None, vec![]),
        };
        let width = config.embedding_width();
        let embedding_highway = if config.encoder == EncoderKind::Full && config.embedding_finetune {
            Some(Highway::new(params, "encoder.embedding_highway", width, 2, std, rng)?)
        } else {
            None
        };
        let bilstm = BiLstm::new(
            params,
            "encoder.bilstm",
            width,
            config.hidden_size / 2,
            config.bilstm_layers(),
            std,
            rng,
        )?;
        let query_highway = if config.encoder == EncoderKind::Full && config.query_finetune {
            Some(Highway::new(params, "encoder.query_highway", config.hidden_size, 1, std, rng)?)
        } else {
            None
        };
        let ctx_layers = match config.encoder {
            EncoderKind::Vanilla => 1,
            EncoderKind::Full => config.l_ctx,
        };
        Ok(Encoder {
            kind: config.encoder,
            word_table,
            char_table,
            char_bags,
            embedding_highway,
            bilstm,
            query_highway,
            ctx_layers,
            embedding_dropout: config.embedding_dropout,
            recurrent_dropout: config.recurrent_dropout,
        })
    }

    /// Per-token input vectors `[N, width]`: word vector (with dropout in
    /// training), optionally concatenated with the mean character n-gram
    /// vector, optionally passed through the embedding highway.
    pub fn embed(&self, ctx: &mut Ctx<'_>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(IramError::EmptyInput("encoder"));
        }
        let word_ids: Vec<Option<usize>> = ids
            .iter()
            .map(|&i| (i >= FIRST_WORD_ID).then_some(i))
            .collect();
        let table = ctx.p(self.word_table);
        let words = ctx.tape.embedding(table, &word_ids)?;
        let words = ctx.dropout(words, self.embedding_dropout)?;
        let mut x = match self.char_table {
            Some(ct) => {
                let bags: Vec<Vec<usize>> = ids
                    .iter()
                    .map(|&i| self.char_bags.get(i).cloned().unwrap_or_default())
                    .collect();
                let table = ctx.p(ct);
                let chars = ctx.tape.embedding_mean(table, &bags)?;
                let wr = ctx.tape.rows(words)?;
                let cr = ctx.tape.rows(chars)?;
                let rows = wr
                    .into_iter()
                    .zip(cr)
                    .map(|(w, c)| ctx.tape.concat(&[w, c]))
                    .collect::<Result<Vec<_>>>()?;
                ctx.tape.stack(&rows)?
            }
            None => words,
        };
        if let Some(hw) = &self.embedding_highway {
            x = hw.forward(ctx, x)?;
        }
        Ok(x)
    }

    /// Encodes `ids[..length]`; `ids[length..]` is padding.
    pub fn encode(&self, ctx: &mut Ctx<'_>, ids: &[usize], length: usize) -> Result<EncoderOutput> {
        if length == 0 || ids.is_empty() {
            return Err(IramError::EmptyInput("encoder"));
        }
        let emb = self.embed(ctx, ids)?;
        let rows = ctx.tape.rows(emb)?;
        let layers = self.bilstm.forward(ctx, &rows, length, self.recurrent_dropout)?;
        let states = layers[self.ctx_layers - 1].outputs.clone();
        let last = layers.last().expect("at least one layer");
        let raw_query = ctx
            .tape
            .concat(&[last.final_forward_cell, last.final_backward_cell])?;
        let query = match &self.query_highway {
            Some(hw) => hw.forward(ctx, raw_query)?,
            None => raw_query,
        };
        Ok(EncoderOutput { states, query })
    }
}
