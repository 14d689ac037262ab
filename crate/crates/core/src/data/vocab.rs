use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{IramError, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token ↔ id map. Id 0 is padding and id 1 the unknown token; real tokens
/// start at 2, ordered by descending corpus frequency, ties broken by the
/// token's byte order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn build<'a, I>(sentences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && *t != PAD && *t != UNK)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD, UNK]
            .into_iter()
            .chain(entries.into_iter().map(|(t, _)| t))
            .map(String::from)
            .collect::<Vec<_>>();
        Vocabulary::from(tokens)
    }

    pub fn from_examples(examples: &[Example], min_count: usize) -> Self {
        Vocabulary::build(examples.iter().map(|e| e.tokens.as_slice()), min_count)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| IramError::json(path, e))?;
        std::fs::write(path, s).map_err(|e| IramError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
        let v: Vocabulary = serde_json::from_str(&s).map_err(|e| IramError::json(path, e))?;
        if v.token(PAD_ID) != Some(PAD) || v.token(UNK_ID) != Some(UNK) || v.ids.len() != v.tokens.len() {
            return Err(IramError::Data(format!("{}: malformed vocabulary", path.display())));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ids_follow_frequency_then_bytes() {
        let a = toks("b a c a");
        let b = toks("c a d");
        let v = Vocabulary::build([a.as_slice(), b.as_slice()], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "c", "b", "d"]);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.encode(&toks("d a")), vec![5, 2]);
    }

    #[test]
    fn construction_is_deterministic_and_bijective() {
        let corpus: Vec<Vec<String>> = (0..50).map(|i| toks(&format!("w{} w{} x", i % 7, i % 3))).collect();
        let v1 = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), 1);
        let v2 = Vocabulary::build(corpus.iter().rev().map(|s| s.as_slice()), 1);
        assert_eq!(v1, v2);
        for (i, t) in v1.tokens().iter().enumerate().skip(2) {
            assert_eq!(v1.id(t), i);
        }
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let a = toks("a a b");
        let v = Vocabulary::build([a.as_slice()], 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("b"), UNK_ID);
    }
}
