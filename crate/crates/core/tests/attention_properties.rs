use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iram::attention::{iterate, penalty_on_tape, AttentionParams};
use iram::gradcheck::check_gradients;
use iram::params::Ctx;
use iram::{attention_penalty, AttentionTrace, IramConfig, Params, Tensor, Var};

/// Random trace with `t` rows over `n` inputs; row `i` spreads over its
/// first `n + i` columns.
fn trace_strategy() -> impl Strategy<Value = AttentionTrace> {
    (1usize..7, 1usize..6).prop_flat_map(|(n, t)| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, n + t - 1), t).prop_map(move |raw| {
            let width = n + t - 1;
            let weights = raw
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let live = n + i;
                    let z: f64 = r[..live].iter().sum::<f64>() + 1e-12;
                    (0..width).map(|j| if j < live { r[j] / z } else { 0.0 }).collect()
                })
                .collect();
            AttentionTrace::from_weights(n, weights).unwrap()
        })
    })
}

fn oracle(trace: &AttentionTrace, gamma: f64) -> f64 {
    let a = &trace.weights;
    let mut total = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                total += a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    gamma / (2.0 * a.len() as f64) * total
}

proptest! {
    #[test]
    fn penalty_matches_double_loop(trace in trace_strategy(), gamma in 0.0f64..2.0) {
        let cfg = IramConfig::new(trace.iterations(), gamma).unwrap();
        let got = attention_penalty(&trace, &cfg).unwrap();
        prop_assert!((got - oracle(&trace, gamma)).abs() < 1e-10);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn penalty_is_invariant_to_input_permutation(trace in trace_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = trace.n_inputs;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let weights = trace
            .weights
            .iter()
            .map(|r| {
                let mut out = r.clone();
                for (dst, &src) in perm.iter().enumerate() {
                    out[dst] = r[src];
                }
                out
            })
            .collect();
        let permuted = AttentionTrace::from_weights(n, weights).unwrap();
        let cfg = IramConfig::new(trace.iterations(), 0.7).unwrap();
        let a = attention_penalty(&trace, &cfg).unwrap();
        let b = attention_penalty(&permuted, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_iteration_penalty_is_zero(row in prop::collection::vec(0.01f64..1.0, 1..8), gamma in 0.0f64..5.0) {
        let z: f64 = row.iter().sum();
        let trace = AttentionTrace::from_weights(row.len(), vec![row.iter().map(|v| v / z).collect()]).unwrap();
        prop_assert_eq!(attention_penalty(&trace, &IramConfig::new(1, gamma).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn iterate_rows_are_prefix_distributions(
        n in 1usize..6,
        t in 1usize..5,
        pad in 0usize..3,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let att = AttentionParams::new(&mut p, "att", 3, 4, 1.0, &mut rng).unwrap();
        let inputs: Vec<Tensor> = (0..n + pad)
            .map(|i| Tensor::vector((0..4).map(|k| ((i * 4 + k) as f64 * 0.71 + seed as f64).sin()).collect()))
            .collect();
        let mask: Vec<bool> = (0..n + pad).map(|i| i < n).collect();
        let mut ctx = Ctx::eval(&p);
        let xs: Vec<Var> = inputs.iter().map(|x| ctx.tape.input(x)).collect();
        let q = ctx.tape.input(&Tensor::vector(vec![0.5, -1.0, 1.5]));
        let out = iterate(&mut ctx, &xs, &mask, q, &att, &IramConfig::new(t, 0.1).unwrap()).unwrap();
        let trace = out.trace(&ctx.tape);
        prop_assert_eq!(trace.iterations(), t);
        prop_assert_eq!(trace.queries.len(), t);
        prop_assert_eq!(trace.summaries.len(), t);
        let n_all = n + pad;
        for (i, row) in trace.weights.iter().enumerate() {
            prop_assert_eq!(row.len(), n_all + t - 1);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (j, v) in row.iter().enumerate() {
                let padding = j >= n && j < n_all;
                let future = j >= n_all + i;
                if padding || future {
                    prop_assert_eq!(*v, 0.0, "row {} col {}", i, j);
                } else {
                    prop_assert!(*v > 0.0);
                }
            }
        }
    }

    #[test]
    fn penalty_gradient_wrt_scores(n in 1usize..4, t in 2usize..4, scores in prop::collection::vec(-2.0f64..2.0, 12)) {
        let inputs: Vec<Tensor> = (0..t).map(|i| Tensor::vector(scores[i * 3..i * 3 + n + i].to_vec())).collect();
        let report = check_gradients(
            &inputs,
            |tape, v| {
                let rows = v
                    .iter()
                    .map(|s| tape.softmax(*s, None))
                    .collect::<iram::Result<Vec<_>>>()?;
                penalty_on_tape(tape, &rows, n, 1.0)
            },
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
