use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iram::gradcheck::check_gradients;
use iram::tensor::softmax_values;
use iram::{Tape, Tensor};

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn vector_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(x, mut m, keep)| {
                m[keep] = true;
                (x, m)
            })
    })
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector((x, mask) in vector_and_mask()) {
        for m in [None, Some(mask.as_slice())] {
            let p = softmax_values(&x, m).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if let Some(m) = m {
                for (v, on) in p.iter().zip(m) {
                    if !on {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_on_tape_matches_values((x, mask) in vector_and_mask()) {
        let mut tape = Tape::new();
        let v = tape.input(&Tensor::vector(x.clone()));
        let s = tape.softmax(v, Some(&mask)).unwrap();
        let want = softmax_values(&x, Some(&mask)).unwrap();
        prop_assert_eq!(tape.value(s), want.as_slice());
    }

    #[test]
    fn dropout_identity_cases(x in values(10), p in 0.0f64..0.9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let v = tape.input(&Tensor::vector(x.clone()));
        let eval = tape.dropout(v, p, false, &mut rng).unwrap();
        prop_assert_eq!(tape.value(eval), x.as_slice());
        let zero = tape.dropout(v, 0.0, true, &mut rng).unwrap();
        prop_assert_eq!(tape.value(zero), x.as_slice());
    }

    #[test]
    fn smooth_composite_gradients(
        x in values(3),
        w in values(12),
        b in values(4),
        label in 0usize..4,
    ) {
        let inputs = [
            Tensor::matrix(1, 3, x).unwrap(),
            Tensor::matrix(3, 4, w).unwrap(),
            Tensor::vector(b),
        ];
        let report = check_gradients(
            &inputs,
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.select_row(h, 0)?;
                let h = t.add(h, v[2])?;
                let a = t.tanh(h);
                let s = t.sigmoid(h);
                let g = t.mul(a, s)?;
                let p = t.softmax(g, None)?;
                let q = t.one_minus(p);
                let ce = t.cross_entropy(q, label)?;
                let m = t.mean(g);
                let m = t.scale(m, 0.5);
                let y = t.affine(ce, 2.0, 1.0);
                t.add(y, m)
            },
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn structural_op_gradients(x in values(6), y in values(6)) {
        let inputs = [Tensor::matrix(2, 3, x).unwrap(), Tensor::matrix(3, 2, y).unwrap()];
        let report = check_gradients(
            &inputs,
            |t, v| {
                let xt = t.transpose(v[0])?;
                let d = t.sub(xt, v[1])?;
                let rows = t.rows(d)?;
                let c = t.concat(&rows)?;
                let s = t.slice(c, 1, 4)?;
                let sq = t.mul(s, s)?;
                let e = t.embedding(v[1], &[Some(2), None, Some(0), Some(2)])?;
                let e = t.sum(e);
                let bags = t.embedding_mean(v[0], &[vec![0, 1], vec![], vec![1]])?;
                let bags = t.sum(bags);
                let z = t.add(e, bags)?;
                let q = t.sum(sq);
                t.add(q, z)
            },
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
