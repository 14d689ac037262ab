//! Parameterized layers: affine maps, highway networks, GRU and LSTM cells,
//! a stacked BiLSTM, and the maxout classifier.
//!
//! Vectors use the row convention: an affine map is `x · W + b` with `W`
//! stored as `[in, out]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IramError, Result};
use crate::params::{Ctx, ParamId, Params};
use crate::tensor::Var;

fn check_width(ctx: &Ctx<'_>, op: &'static str, x: Var, width: usize) -> Result<()> {
    match ctx.tape.shape(x).last() {
        Some(&d) if d == width => Ok(()),
        _ => Err(IramError::dim(op, ctx.tape.shape(x), &[width])),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_in: usize,
        d_out: usize,
        bias: Option<f64>,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add_gaussian(format!("{path}.w"), vec![d_in, d_out], std, rng)?;
        let bias = match bias {
            Some(b) => Some(params.add_constant(format!("{path}.b"), vec![d_out], b)?),
            None => None,
        };
        Ok(Linear {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    /// Works on a vector `[d_in]` or on every row of a matrix `[n, d_in]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        check_width(ctx, "linear", x, self.d_in)?;
        let w = ctx.p(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.p(b);
                ctx.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HighwayUnit {
    pub transform: Linear,
    pub gate: Linear,
}

/// Stack of highway layers: `y = g ⊙ relu(W_t x + b_t) + (1 − g) ⊙ x`,
/// `g = σ(W_g x + b_g)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Highway {
    pub units: Vec<HighwayUnit>,
    pub width: usize,
}

impl Highway {
    pub const GATE_BIAS_INIT: f64 = 1.0;

    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        width: usize,
        layers: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let units = (0..layers)
            .map(|l| {
                Ok(HighwayUnit {
                    transform: Linear::new(params, &format!("{path}.l{l}.transform"), width, width, Some(0.0), std, rng)?,
                    gate: Linear::new(
                        params,
                        &format!("{path}.l{l}.gate"),
                        width,
                        width,
                        Some(Self::GATE_BIAS_INIT),
                        std,
                        rng,
                    )?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Highway { units, width })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        check_width(ctx, "highway", x, self.width)?;
        let mut x = x;
        for unit in &self.units {
            let t = unit.transform.forward(ctx, x)?;
            let t = ctx.tape.relu(t);
            let g = unit.gate.forward(ctx, x)?;
            let g = ctx.tape.sigmoid(g);
            let carry = ctx.tape.one_minus(g);
            let a = ctx.tape.mul(g, t)?;
            let b = ctx.tape.mul(carry, x)?;
            x = ctx.tape.add(a, b)?;
        }
        Ok(x)
    }
}

/// GRU cell with `h' = z ⊙ h + (1 − z) ⊙ h̃`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    /// Input map to `[z | r | h̃]`, with the three biases.
    pub input: Linear,
    /// State map to `[z | r]`.
    pub state_zr: Linear,
    /// State map for the candidate, applied to `r ⊙ h`.
    pub state_h: Linear,
    pub d_in: usize,
    pub d_state: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_in: usize,
        d_state: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruCell {
            input: Linear::new(params, &format!("{path}.input"), d_in, 3 * d_state, Some(0.0), std, rng)?,
            state_zr: Linear::new(params, &format!("{path}.state_zr"), d_state, 2 * d_state, None, std, rng)?,
            state_h: Linear::new(params, &format!("{path}.state_h"), d_state, d_state, None, std, rng)?,
            d_in,
            d_state,
        })
    }

    pub fn step(&self, ctx: &mut Ctx<'_>, input: Var, state: Var) -> Result<Var> {
        check_width(ctx, "gru input", input, self.d_in)?;
        check_width(ctx, "gru state", state, self.d_state)?;
        let d = self.d_state;
        let xi = self.input.forward(ctx, input)?;
        let hs = self.state_zr.forward(ctx, state)?;
        let xz = ctx.tape.slice(xi, 0, d)?;
        let xr = ctx.tape.slice(xi, d, d)?;
        let xh = ctx.tape.slice(xi, 2 * d, d)?;
        let hz = ctx.tape.slice(hs, 0, d)?;
        let hr = ctx.tape.slice(hs, d, d)?;
        let z = ctx.tape.add(xz, hz)?;
        let z = ctx.tape.sigmoid(z);
        let r = ctx.tape.add(xr, hr)?;
        let r = ctx.tape.sigmoid(r);
        let rh = ctx.tape.mul(r, state)?;
        let uh = self.state_h.forward(ctx, rh)?;
        let cand = ctx.tape.add(xh, uh)?;
        let cand = ctx.tape.tanh(cand);
        let keep = ctx.tape.mul(z, state)?;
        let one_minus_z = ctx.tape.one_minus(z);
        let fresh = ctx.tape.mul(one_minus_z, cand)?;
        ctx.tape.add(keep, fresh)
    }
}

/// LSTM cell; gate order in the fused maps is input, forget, candidate, output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmCell {
    pub input: Linear,
    pub state: Linear,
    pub d_in: usize,
    pub hidden: usize,
}

pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub const FORGET_BIAS_INIT: f64 = 1.0;

    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_in: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let input = Linear::new(params, &format!("{path}.input"), d_in, 4 * hidden, Some(0.0), std, rng)?;
        let b = input.bias.expect("bias requested");
        params.get_mut(b).data_mut()[hidden..2 * hidden].fill(Self::FORGET_BIAS_INIT);
        let state = Linear::new(params, &format!("{path}.state"), hidden, 4 * hidden, None, std, rng)?;
        Ok(LstmCell {
            input,
            state,
            d_in,
            hidden,
        })
    }

    pub fn step(&self, ctx: &mut Ctx<'_>, x: Var, prev: &LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let xi = self.input.forward(ctx, x)?;
        let hs = self.state.forward(ctx, prev.h)?;
        let pre = ctx.tape.add(xi, hs)?;
        let i = ctx.tape.slice(pre, 0, h)?;
        let i = ctx.tape.sigmoid(i);
        let f = ctx.tape.slice(pre, h, h)?;
        let f = ctx.tape.sigmoid(f);
        let g = ctx.tape.slice(pre, 2 * h, h)?;
        let g = ctx.tape.tanh(g);
        let o = ctx.tape.slice(pre, 3 * h, h)?;
        let o = ctx.tape.sigmoid(o);
        let fc = ctx.tape.mul(f, prev.c)?;
        let ig = ctx.tape.mul(i, g)?;
        let c = ctx.tape.add(fc, ig)?;
        let tc = ctx.tape.tanh(c);
        let h = ctx.tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Stacked bidirectional LSTM. Each direction has `hidden` units, so
/// position outputs have width `2 * hidden`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
    pub d_in: usize,
    pub hidden: usize,
}

pub struct BiLstmLayerOutput {
    /// One vector per padded position; positions at or beyond the length are zero.
    pub outputs: Vec<Var>,
    /// Final cell state of the forward direction (at the last real token).
    pub final_forward_cell: Var,
    /// Final cell state of the backward direction (at the first token).
    pub final_backward_cell: Var,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_in: usize,
        hidden: usize,
        layers: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { d_in } else { 2 * hidden };
                Ok(BiLstmLayer {
                    forward: LstmCell::new(params, &format!("{path}.l{l}.fwd"), d, hidden, std, rng)?,
                    backward: LstmCell::new(params, &format!("{path}.l{l}.bwd"), d, hidden, std, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BiLstm { layers, d_in, hidden })
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    /// Runs every layer over `inputs[..length]`. `dropout` is applied to each
    /// layer's outputs before they feed the next layer.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        inputs: &[Var],
        length: usize,
        dropout: f64,
    ) -> Result<Vec<BiLstmLayerOutput>> {
        if inputs.is_empty() || length == 0 {
            return Err(IramError::EmptyInput("bilstm"));
        }
        if length > inputs.len() {
            return Err(IramError::dim("bilstm length", &[inputs.len()], &[length]));
        }
        for x in inputs {
            check_width(ctx, "bilstm", *x, self.d_in)?;
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Var> = inputs[..length].to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                current = current
                    .into_iter()
                    .map(|v| ctx.dropout(v, dropout))
                    .collect::<Result<_>>()?;
            }
            let fwd = run_direction(ctx, &layer.forward, current.iter().copied())?;
            let bwd = run_direction(ctx, &layer.backward, current.iter().rev().copied())?;
            let final_forward_cell = fwd.last().expect("non-empty").c;
            let final_backward_cell = bwd.last().expect("non-empty").c;
            let mut outputs: Vec<Var> = (0..length)
                .map(|i| ctx.tape.concat(&[fwd[i].h, bwd[length - 1 - i].h]))
                .collect::<Result<_>>()?;
            current = outputs.clone();
            for _ in length..inputs.len() {
                outputs.push(ctx.tape.zeros(vec![2 * self.hidden]));
            }
            out.push(BiLstmLayerOutput {
                outputs,
                final_forward_cell,
                final_backward_cell,
            });
        }
        Ok(out)
    }
}

fn run_direction(
    ctx: &mut Ctx<'_>,
    cell: &LstmCell,
    xs: impl Iterator<Item = Var>,
) -> Result<Vec<LstmState>> {
    let mut state = LstmState {
        h: ctx.tape.zeros(vec![cell.hidden]),
        c: ctx.tape.zeros(vec![cell.hidden]),
    };
    let mut states = Vec::new();
    for x in xs {
        let next = cell.step(ctx, x, &state)?;
        state = LstmState { h: next.h, c: next.c };
        states.push(next);
    }
    Ok(states)
}

/// Maxout layers (each an affine map to `width * pool` followed by a max over
/// groups of `pool`) and a final affine map to class logits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Maxout {
    pub layers: Vec<Linear>,
    pub output: Linear,
    pub pool: usize,
    pub d_in: usize,
}

impl Maxout {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_in: usize,
        width: usize,
        pool: usize,
        layers: usize,
        num_classes: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = (0..layers)
            .map(|l| {
                let d = if l == 0 { d_in } else { width };
                Linear::new(params, &format!("{path}.l{l}"), d, width * pool, Some(0.0), std, rng)
            })
            .collect::<Result<_>>()?;
        let last = if layers == 0 { d_in } else { width };
        let output = Linear::new(params, &format!("{path}.out"), last, num_classes, Some(0.0), std, rng)?;
        Ok(Maxout {
            layers: hidden,
            output,
            pool,
            d_in,
        })
    }

    /// `dropout` is applied to the input of every affine map.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, dropout: f64) -> Result<Var> {
        check_width(ctx, "maxout", x, self.d_in)?;
        let mut x = x;
        for layer in &self.layers {
            x = ctx.dropout(x, dropout)?;
            let a = layer.forward(ctx, x)?;
            x = ctx.tape.max_pool(a, self.pool)?;
        }
        x = ctx.dropout(x, dropout)?;
        self.output.forward(ctx, x)
    }
}
