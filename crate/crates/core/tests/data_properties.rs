use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iram::data::embeddings::standardize;
use iram::data::sst::{parse_sst_tree, parse_tree, SstTree};
use iram::data::synthetic::{generate_synthetic, parse_tsv, write_tsv, SyntheticGrammar};
use iram::data::Vocabulary;

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}",
        "[A-Z][a-z]{0,5}",
        Just("-LRB-".to_string()),
        Just("n't".to_string()),
        Just("...".to_string()),
        "[0-9]{1,3}",
    ]
}

fn tree() -> impl Strategy<Value = SstTree> {
    let leaf = (0u8..5, token()).prop_map(|(label, token)| SstTree::Leaf { label, token });
    leaf.prop_recursive(5, 40, 3, |inner| {
        (0u8..5, prop::collection::vec(inner, 1..4)).prop_map(|(label, children)| SstTree::Node { label, children })
    })
}

/// Walks the sentence once, restarting the score at each contrast word.
fn reference_label(g: &SyntheticGrammar, tokens: &[String]) -> Option<usize> {
    let mut score = 0i64;
    let mut flip = false;
    for t in tokens {
        if *t == g.contrast {
            score = 0;
        } else if g.negators.contains(t) {
            flip = true;
            continue;
        } else if g.positive.contains(t) {
            score += if flip { -1 } else { 1 };
        } else if g.negative.contains(t) {
            score += if flip { 1 } else { -1 };
        }
        flip = false;
    }
    match score {
        s if s > 0 => Some(1),
        s if s < 0 => Some(0),
        _ => None,
    }
}

proptest! {
    #[test]
    fn sst_render_parse_round_trip(t in tree()) {
        let line = t.render();
        prop_assert_eq!(parse_tree(&line).unwrap(), t.clone());
        let (tokens, label) = parse_sst_tree(&line).unwrap();
        prop_assert_eq!(tokens, t.leaves());
        prop_assert_eq!(label, t.label());
    }

    #[test]
    fn vocabulary_ignores_corpus_order(
        corpus in prop::collection::vec(prop::collection::vec(token(), 1..8), 1..20),
        seed in any::<u64>(),
        min_count in 1usize..3,
    ) {
        let a = Vocabulary::build(corpus.iter().map(Vec::as_slice), min_count);
        let b = Vocabulary::build(corpus.iter().map(Vec::as_slice), min_count);
        prop_assert_eq!(&a, &b);
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let c = Vocabulary::build(shuffled.iter().map(Vec::as_slice), min_count);
        prop_assert_eq!(&a, &c);
        for (i, t) in a.tokens().iter().enumerate() {
            prop_assert_eq!(a.id(t), i);
        }
    }

    #[test]
    fn standardized_columns(rows in 2usize..30, dim in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-5.0..5.0) * 3.0 + 1.0).collect();
        standardize(&mut values, dim);
        for j in 0..dim {
            let col: Vec<f64> = (0..rows).map(|i| values[i * dim + j]).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn synthetic_labels_follow_the_grammar(seed in any::<u64>()) {
        let g = SyntheticGrammar::with_seed(seed);
        let examples = generate_synthetic(&g, 50).unwrap();
        for e in &examples {
            prop_assert_eq!(reference_label(&g, &e.tokens), Some(e.label), "{:?}", e.tokens);
        }
        let mut tsv = Vec::new();
        write_tsv(&examples, &mut tsv).unwrap();
        let back = parse_tsv(std::str::from_utf8(&tsv).unwrap(), "mem").unwrap();
        let strip = |v: &[iram::data::Example]| v.iter().map(|e| (e.tokens.clone(), e.label)).collect::<Vec<_>>();
        prop_assert_eq!(strip(&back), strip(&examples));
    }
}
