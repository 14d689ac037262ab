//! Pretrained vectors in the plain text format (`token v1 v2 ...` per line),
//! standardized at load, and character n-gram inventories.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::vocab::Vocabulary;
use crate::error::{IramError, Result};
use crate::tensor::Tensor;

pub const MAX_NGRAM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub tokens: Vec<String>,
    pub dim: usize,
    /// Row-major `[tokens.len(), dim]`.
    pub values: Vec<f64>,
}

impl Pretrained {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut values = Vec::new();
        let mut dim = 0;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let row = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| IramError::Parse {
                    offset: start,
                    message: format!("{source}: {e}"),
                })?;
            if dim == 0 {
                dim = row.len();
            }
            if row.is_empty() || row.len() != dim {
                return Err(IramError::Parse {
                    offset: start,
                    message: format!("{source}: expected {dim} values for {token:?}, found {}", row.len()),
                });
            }
            tokens.push(token.to_string());
            values.extend(row);
        }
        if tokens.is_empty() {
            return Err(IramError::EmptyInput("pretrained vectors"));
        }
        Ok(Pretrained { tokens, dim, values })
    }

    /// Loads and standardizes.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
        let mut p = Pretrained::parse(&text, &path.display().to_string())?;
        standardize(&mut p.values, p.dim);
        Ok(p)
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Standard-normal vectors for `tokens`, standardized.
    pub fn random<R: Rng + ?Sized>(tokens: Vec<String>, dim: usize, rng: &mut R) -> Self {
        let mut values: Vec<f64> = (0..tokens.len() * dim).map(|_| StandardNormal.sample(rng)).collect();
        standardize(&mut values, dim);
        Pretrained { tokens, dim, values }
    }
}

/// In place, per column: subtract the mean and divide by the population
/// standard deviation. Constant columns are only centered.
pub fn standardize(values: &mut [f64], dim: usize) {
    let rows = values.len() / dim;
    if rows == 0 {
        return;
    }
    for j in 0..dim {
        let mean = (0..rows).map(|i| values[i * dim + j]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|i| (values[i * dim + j] - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..rows {
            let v = &mut values[i * dim + j];
            *v = (*v - mean) / sd;
        }
    }
}

/// `[vocab, dim]` table: pretrained rows where available, zero rows otherwise
/// (including padding and unknown).
pub fn word_table(vocab: &Vocabulary, pretrained: &Pretrained) -> Result<Tensor> {
    let index = pretrained.index();
    let dim = pretrained.dim;
    let mut data = vec![0.0; vocab.len() * dim];
    for (id, tok) in vocab.tokens().iter().enumerate().skip(crate::encoder::FIRST_WORD_ID) {
        if let Some(&r) = index.get(tok.as_str()) {
            data[id * dim..(id + 1) * dim].copy_from_slice(pretrained.row(r));
        }
    }
    Tensor::new(vec![vocab.len(), dim], data)
}

/// Distinct character n-grams (lengths 1 to [`MAX_NGRAM`]) of a word, in
/// order of first occurrence.
pub fn char_ngrams(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = Vec::new();
    for n in 1..=MAX_NGRAM.min(chars.len()) {
        for w in chars.windows(n) {
            let g: String = w.iter().collect();
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    out
}

/// Every distinct n-gram of the vocabulary's real tokens, sorted.
pub fn ngram_inventory(vocab: &Vocabulary) -> Vec<String> {
    let mut all: Vec<String> = vocab
        .tokens()
        .iter()
        .skip(crate::encoder::FIRST_WORD_ID)
        .flat_map(|t| char_ngrams(t))
        .collect();
    all.sort();
    all.dedup();
    all
}

/// Per vocabulary id, the inventory rows of its n-grams; n-grams missing from
/// the inventory are skipped.
pub fn ngram_bags(vocab: &Vocabulary, inventory: &Pretrained) -> Vec<Vec<usize>> {
    let index = inventory.index();
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, t)| {
            if id < crate::encoder::FIRST_WORD_ID {
                return vec![];
            }
            char_ngrams(t)
                .iter()
                .filter_map(|g| index.get(g.as_str()).copied())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_text_vectors() {
        let p = Pretrained::parse("the 1 2\nfilm -1.5 3e-1\n\n", "mem").unwrap();
        assert_eq!(p.tokens, vec!["the", "film"]);
        assert_eq!(p.values, vec![1.0, 2.0, -1.5, 0.3]);
        assert!(Pretrained::parse("a 1 2\nb 1\n", "mem").is_err());
        assert!(Pretrained::parse("a 1 x\n", "mem").is_err());
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut values: Vec<f64> = (0..200 * 7).map(|i| rng.random::<f64>() * 10.0 + (i % 7) as f64).collect();
        standardize(&mut values, 7);
        for j in 0..7 {
            let col: Vec<f64> = (0..200).map(|i| values[i * 7 + j]).collect();
            let mean = col.iter().sum::<f64>() / 200.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ngrams_are_distinct_and_bounded() {
        assert_eq!(char_ngrams("aa"), vec!["a", "aa"]);
        let g = char_ngrams("good");
        assert!(g.contains(&"good".to_string()) && g.contains(&"oo".to_string()));
        assert!(g.iter().all(|x| x.chars().count() <= MAX_NGRAM));
    }

    #[test]
    fn word_table_zero_rows_for_missing_tokens() {
        let vocab = Vocabulary::from(vec!["<pad>".into(), "<unk>".into(), "a".into(), "zz".into()]);
        let p = Pretrained::parse("a 1 2\nb 3 4\n", "mem").unwrap();
        let t = word_table(&vocab, &p).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
    }
}
