//! Datasets, vocabularies, pretrained vectors, and padded batches.

pub mod embeddings;
pub mod imdb;
pub mod sst;
pub mod synthetic;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use vocab::Vocabulary;

use crate::error::{IramError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: usize,
    pub source: String,
}

/// Right-padded token ids with explicit lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Every row has the batch's maximum length; padding is [`vocab::PAD_ID`].
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(sequences: Vec<Vec<usize>>, labels: Vec<usize>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(IramError::EmptyInput("batch"));
        }
        if sequences.len() != labels.len() {
            return Err(IramError::dim("batch labels", &[sequences.len()], &[labels.len()]));
        }
        if sequences.iter().any(|s| s.is_empty()) {
            return Err(IramError::EmptyInput("batch sequence"));
        }
        let max = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let lengths = sequences.iter().map(Vec::len).collect();
        let ids = sequences
            .into_iter()
            .map(|mut s| {
                s.resize(max, vocab::PAD_ID);
                s
            })
            .collect();
        Ok(Batch { ids, lengths, labels })
    }

    pub fn from_examples<'a, I>(examples: I, vocab: &Vocabulary) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Example>,
    {
        let (seqs, labels) = examples
            .into_iter()
            .map(|e| (vocab.encode(&e.tokens), e.label))
            .unzip();
        Batch::new(seqs, labels)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fails if any label is outside `0..num_classes`.
pub fn check_labels(examples: &[Example], num_classes: usize) -> Result<()> {
    match examples.iter().find(|e| e.label >= num_classes) {
        Some(e) => Err(IramError::Data(format!(
            "{}: label {} outside 0..{num_classes}",
            e.source, e.label
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_pads_to_longest() {
        let b = Batch::new(vec![vec![3, 4, 5], vec![6]], vec![1, 0]).unwrap();
        assert_eq!(b.ids, vec![vec![3, 4, 5], vec![6, 0, 0]]);
        assert_eq!(b.lengths, vec![3, 1]);
        assert!(Batch::new(vec![vec![]], vec![0]).is_err());
        assert!(Batch::new(vec![], vec![]).is_err());
    }
}
