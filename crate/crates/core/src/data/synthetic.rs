//! Deterministic negation/contrast sentiment sentences.
//!
//! A clause is a run of polarity words (+1 or −1), each optionally preceded
//! by a negator that flips it, interleaved with neutral filler. A sentence is
//! one clause, or `A but B`, in which case only `B` counts. The label is the
//! sign of the counted score (1 positive, 0 negative); zero-score sentences
//! are rejected and redrawn.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{IramError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticGrammar {
    pub seed: u64,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub neutral: Vec<String>,
    pub negators: Vec<String>,
    pub contrast: String,
    /// Polarity words per clause are drawn uniformly from `1..=max_polar`.
    pub max_polar: usize,
    /// Neutral words before each polarity word are drawn from `0..=max_filler`.
    pub max_filler: usize,
    pub negation_prob: f64,
    pub contrast_prob: f64,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl Default for SyntheticGrammar {
    fn default() -> Self {
        SyntheticGrammar {
            seed: 0,
            positive: words("good great heartfelt brilliant charming moving funny superb delightful wonderful"),
            negative: words("bad dull boring awful tedious bland clumsy tiresome weak messy"),
            neutral: words("the film movie plot acting story is was a very quite and with cast script"),
            negators: words("not never"),
            contrast: "but".into(),
            max_polar: 2,
            max_filler: 2,
            negation_prob: 0.3,
            contrast_prob: 0.4,
        }
    }
}

impl SyntheticGrammar {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticGrammar {
            seed,
            ..SyntheticGrammar::default()
        }
    }

    fn clause<R: Rng>(&self, rng: &mut R) -> (Vec<String>, i64) {
        let mut tokens = Vec::new();
        let mut score = 0;
        for _ in 0..rng.random_range(1..=self.max_polar.max(1)) {
            for _ in 0..rng.random_range(0..=self.max_filler) {
                tokens.push(self.neutral.choose(rng).expect("neutral lexicon").clone());
            }
            let negated = rng.random_bool(self.negation_prob);
            if negated {
                tokens.push(self.negators.choose(rng).expect("negator lexicon").clone());
            }
            let positive = rng.random_bool(0.5);
            let lex = if positive { &self.positive } else { &self.negative };
            tokens.push(lex.choose(rng).expect("polarity lexicon").clone());
            let v = if positive { 1 } else { -1 };
            score += if negated { -v } else { v };
        }
        (tokens, score)
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> (Vec<String>, usize) {
        loop {
            let (mut tokens, mut score) = self.clause(rng);
            if rng.random_bool(self.contrast_prob) {
                let (b, b_score) = self.clause(rng);
                tokens.push(self.contrast.clone());
                tokens.extend(b);
                score = b_score;
            }
            if score != 0 {
                return (tokens, usize::from(score > 0));
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.positive.is_empty() || self.negative.is_empty() || self.neutral.is_empty() || self.negators.is_empty()
        {
            return Err(IramError::Config("synthetic lexicons must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.negation_prob) || !(0.0..=1.0).contains(&self.contrast_prob) {
            return Err(IramError::Config("synthetic probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(grammar: &SyntheticGrammar, n: usize) -> Result<Vec<Example>> {
    grammar.validate()?;
    if n == 0 {
        return Err(IramError::EmptyInput("generate_synthetic"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(grammar.seed);
    Ok((0..n)
        .map(|i| {
            let (tokens, label) = grammar.sentence(&mut rng);
            Example {
                tokens,
                label,
                source: format!("synthetic:{}:{i}", grammar.seed),
            }
        })
        .collect())
}

/// `label \t space-joined tokens` per line.
pub fn write_tsv<W: Write>(examples: &[Example], mut out: W) -> std::io::Result<()> {
    for e in examples {
        writeln!(out, "{}\t{}", e.label, e.tokens.join(" "))?;
    }
    Ok(())
}

pub fn save_tsv(examples: &[Example], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| IramError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_tsv(examples, &mut w).map_err(|e| IramError::io(path, e))?;
    w.flush().map_err(|e| IramError::io(path, e))
}

pub fn parse_tsv(text: &str, source: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let (label, tokens) = line.split_once('\t').ok_or_else(|| IramError::Parse {
            offset: start,
            message: format!("{source} line {}: missing tab", n + 1),
        })?;
        let label = label.parse::<usize>().map_err(|e| IramError::Parse {
            offset: start,
            message: format!("{source} line {}: {e}", n + 1),
        })?;
        let tokens: Vec<String> = tokens.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        if tokens.is_empty() {
            return Err(IramError::Parse {
                offset: start,
                message: format!("{source} line {}: no tokens", n + 1),
            });
        }
        out.push(Example {
            tokens,
            label,
            source: format!("{source}:{}", n + 1),
        });
    }
    Ok(out)
}
