//! Movie-review directories: `<root>/pos/*.txt` and `<root>/neg/*.txt`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{IramError, Result};

pub const MAX_TOKENS: usize = 200;

/// Lowercases, drops `<br />` tags, splits on whitespace, and emits every
/// other non-alphanumeric character (apostrophes inside words excepted) as
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let text = text.replace("<br />", " ").replace("<br/>", " ").to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\''
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn truncate(mut tokens: Vec<String>, max_tokens: usize) -> Vec<String> {
    tokens.truncate(max_tokens);
    tokens
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| IramError::io(dir, e))? {
        let entry = entry.map_err(|e| IramError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `root/neg` (label 0) then `root/pos` (label 1), each in file-name
/// order, truncating every review to `max_tokens`. Empty reviews are skipped.
pub fn load_imdb(root: &Path, max_tokens: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (label, sub) in [(0usize, "neg"), (1, "pos")] {
        for path in sorted_files(&root.join(sub))? {
            let text = std::fs::read_to_string(&path).map_err(|e| IramError::io(&path, e))?;
            let tokens = truncate(tokenize(&text), max_tokens);
            if tokens.is_empty() {
                continue;
            }
            out.push(Example {
                tokens,
                label,
                source: path.display().to_string(),
            });
        }
    }
    Ok(out)
}

/// Seeded shuffle, then the first `round(fraction * n)` examples become the
/// validation split. Returns `(train, validation)`.
pub fn split_validation(examples: Vec<Example>, fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = (fraction * examples.len() as f64).round() as usize;
    let mut slots: Vec<Option<Example>> = examples.into_iter().map(Some).collect();
    let valid = idx[..n_valid].iter().map(|&i| slots[i].take().unwrap()).collect();
    let train = slots.into_iter().flatten().collect();
    (train, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("It's GREAT,<br />really!"),
            vec!["it's", "great", ",", "really", "!"]
        );
    }

    #[test]
    fn truncation_caps_length() {
        let long: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        assert_eq!(truncate(long.clone(), MAX_TOKENS).len(), 200);
        assert_eq!(truncate(long[..5].to_vec(), MAX_TOKENS).len(), 5);
    }

    #[test]
    fn loads_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (sub, name, text) in [
            ("pos", "1_9.txt", "A fine film."),
            ("pos", "0_10.txt", "Loved it"),
            ("neg", "5_1.txt", "Dreadful."),
        ] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            std::fs::write(dir.path().join(sub).join(name), text).unwrap();
        }
        let ex = load_imdb(dir.path(), MAX_TOKENS).unwrap();
        assert_eq!(ex.iter().map(|e| e.label).collect::<Vec<_>>(), vec![0, 1, 1]);
        assert_eq!(ex[1].tokens, vec!["loved", "it"]);
    }

    #[test]
    fn missing_directory_names_path() {
        let err = load_imdb(Path::new("/nonexistent/imdb"), 200).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/imdb/neg"), "{err}");
    }

    #[test]
    fn split_is_seeded() {
        let ex: Vec<Example> = (0..50)
            .map(|i| Example {
                tokens: vec![format!("t{i}")],
                label: i % 2,
                source: i.to_string(),
            })
            .collect();
        let (t1, v1) = split_validation(ex.clone(), 0.1, 4);
        let (_, v2) = split_validation(ex.clone(), 0.1, 4);
        let (_, v3) = split_validation(ex, 0.1, 5);
        assert_eq!(v1.len(), 5);
        assert_eq!(t1.len(), 45);
        assert_eq!(v1, v2);
        assert_ne!(v1, v3);
    }
}
