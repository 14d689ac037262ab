use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iram::gradcheck::check_param_gradients;
use iram::nn::{BiLstm, GruCell, Highway, Maxout};
use iram::params::Ctx;
use iram::{Params, Tensor, Var};

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gru_with_saturated_update_gate_keeps_state(x in values(3), h in values(4), seed in any::<u64>()) {
        let mut p = Params::new();
        let cell = GruCell::new(&mut p, "gru", 3, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        p.get_mut(cell.input.bias.unwrap()).data_mut()[..4].fill(1e3);
        let mut ctx = Ctx::eval(&p);
        let xv = ctx.tape.input(&Tensor::vector(x));
        let hv = ctx.tape.input(&Tensor::vector(h.clone()));
        let out = cell.step(&mut ctx, xv, hv).unwrap();
        prop_assert_eq!(ctx.tape.value(out), h.as_slice());
    }

    #[test]
    fn highway_with_closed_gate_is_identity(x in values(5), layers in 1usize..3, seed in any::<u64>()) {
        let mut p = Params::new();
        let hw = Highway::new(&mut p, "hw", 5, layers, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for unit in &hw.units {
            p.get_mut(unit.gate.bias.unwrap()).data_mut().fill(-1e3);
        }
        let mut ctx = Ctx::eval(&p);
        let xv = ctx.tape.input(&Tensor::vector(x.clone()));
        let out = hw.forward(&mut ctx, xv).unwrap();
        prop_assert_eq!(ctx.tape.value(out), x.as_slice());
    }

    #[test]
    fn bilstm_padding_is_zero_and_gets_no_gradient(
        tokens in prop::collection::vec(values(3), 1..5),
        pad in 1usize..3,
        layers in 1usize..3,
        seed in any::<u64>(),
    ) {
        let mut p = Params::new();
        let net = BiLstm::new(&mut p, "bilstm", 3, 2, layers, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let len = tokens.len();
        let padded: Vec<Vec<f64>> = tokens.iter().cloned().chain((0..pad).map(|i| vec![7.0 + i as f64; 3])).collect();

        let run = |rows: &[Vec<f64>]| {
            let mut ctx = Ctx::eval(&p);
            let xs: Vec<Var> = rows.iter().map(|r| ctx.tape.input(&Tensor::vector(r.clone()).with_grad())).collect();
            let out = net.forward(&mut ctx, &xs, len, 0.0).unwrap();
            let last = out.last().unwrap();
            let values: Vec<Vec<f64>> = last.outputs.iter().map(|v| ctx.tape.value(*v).to_vec()).collect();
            let mut parts = last.outputs.clone();
            parts.push(last.final_forward_cell);
            parts.push(last.final_backward_cell);
            let all = ctx.tape.concat(&parts).unwrap();
            let sq = ctx.tape.mul(all, all).unwrap();
            let loss = ctx.tape.sum(sq);
            let grads = ctx.tape.backward(loss).unwrap();
            let input_grads: Vec<Vec<f64>> = xs
                .iter()
                .map(|v| grads.get(*v).map_or_else(|| vec![0.0; 3], <[f64]>::to_vec))
                .collect();
            (values, input_grads)
        };

        let (alone, g_alone) = run(&tokens);
        let (with_pad, g_pad) = run(&padded);
        prop_assert_eq!(&alone[..], &with_pad[..len]);
        prop_assert_eq!(&g_alone[..], &g_pad[..len]);
        for i in len..len + pad {
            prop_assert!(with_pad[i].iter().all(|v| *v == 0.0));
            prop_assert!(g_pad[i].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gru_and_highway_parameter_gradients(x in values(3), h in values(3), seed in any::<u64>()) {
        let mut p = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = GruCell::new(&mut p, "gru", 3, 3, 0.5, &mut rng).unwrap();
        let hw = Highway::new(&mut p, "hw", 3, 2, 0.5, &mut rng).unwrap();
        let report = check_param_gradients(
            &p,
            |ctx| {
                let xv = ctx.tape.input(&Tensor::vector(x.clone()));
                let hv = ctx.tape.input(&Tensor::vector(h.clone()));
                let s = cell.step(ctx, xv, hv)?;
                let y = hw.forward(ctx, s)?;
                let sq = ctx.tape.mul(y, y)?;
                Ok(ctx.tape.sum(sq))
            },
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn maxout_output_shape_and_eval_determinism(x in values(4), seed in any::<u64>()) {
        let mut p = Params::new();
        let net = Maxout::new(&mut p, "cls", 4, 3, 2, 2, 5, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let eval = |dropout: f64| {
            let mut ctx = Ctx::eval(&p);
            let v = ctx.tape.input(&Tensor::vector(x.clone()));
            let y = net.forward(&mut ctx, v, dropout).unwrap();
            ctx.tape.value(y).to_vec()
        };
        let a = eval(0.0);
        prop_assert_eq!(a.len(), 5);
        prop_assert_eq!(a, eval(0.5));
    }
}
