//! Iterative recursive attention.
//!
//! Each of `T` iterations scores the attendable set with bilinear attention,
//! takes the weighted sum of its members, and passes that through a highway
//! layer. Every summary except the last is appended to the attendable set,
//! and a GRU controller (input: the transformed summary, state: the current
//! query) produces the next query.
//!
//! Iteration `t` (1-based) attends over `N + t - 1` items, so the stacked
//! attention matrix is `T × (N + T - 1)` with `T - t` trailing zeros in row `t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IramError, Result};
use crate::nn::{GruCell, Highway};
use crate::params::{Ctx, ParamId, Params};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IramConfig {
    /// Number of attention iterations `T`.
    pub iterations: usize,
    /// Overlap penalty strength `γ`.
    pub gamma: f64,
}

impl IramConfig {
    pub fn new(iterations: usize, gamma: f64) -> Result<Self> {
        let c = IramConfig { iterations, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(IramError::Config("iterations must be at least 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(IramError::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Bilinear map, `[d_q, d_h]`.
    pub bilinear: ParamId,
    pub controller: GruCell,
    pub summary_highway: Highway,
    pub d_q: usize,
    pub d_h: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        path: &str,
        d_q: usize,
        d_h: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionParams {
            bilinear: params.add_gaussian(format!("{path}.bilinear"), vec![d_q, d_h], std, rng)?,
            controller: GruCell::new(params, &format!("{path}.controller"), d_h, d_q, std, rng)?,
            summary_highway: Highway::new(params, &format!("{path}.summary_highway"), d_h, 1, std, rng)?,
            d_q,
            d_h,
        })
    }
}

/// Attention weights `softmax(q W hᵢ)` over the rows of `states`, with masked
/// rows fixed at zero.
pub fn bilinear_scores(
    ctx: &mut Ctx<'_>,
    query: Var,
    states: Var,
    params: &AttentionParams,
    mask: &[bool],
) -> Result<Var> {
    let rows = match ctx.tape.shape(states) {
        [m, d] if *d == params.d_h => *m,
        [0, _] => return Err(IramError::EmptyInput("bilinear_scores")),
        s => return Err(IramError::dim("bilinear_scores", s, &[params.d_h])),
    };
    if mask.len() != rows {
        return Err(IramError::dim("bilinear_scores mask", &[rows], &[mask.len()]));
    }
    let w = ctx.p(params.bilinear);
    let qw = ctx.tape.matmul(query, w)?;
    let scores = ctx.tape.matmul(states, qw)?;
    ctx.tape.softmax(scores, Some(mask))
}

/// `Σᵢ aᵢ hᵢ` for weights `a` over the rows of `states`.
pub fn summarize(tape: &mut Tape<'_>, weights: Var, states: Var) -> Result<Var> {
    match (tape.shape(weights), tape.shape(states)) {
        ([m], [n, _]) if m == n => tape.matmul(weights, states),
        (a, b) => Err(IramError::dim("summarize", a, b)),
    }
}

/// Graph handles produced by [`iterate`].
pub struct AttentionOutput {
    /// Row `t` holds `N + t` weights (0-based `t`).
    pub rows: Vec<Var>,
    /// Highway-transformed summaries `s(1)..s(T)`.
    pub summaries: Vec<Var>,
    /// `q(0) = x̂` through `q(T - 1)`; the controller is not stepped after the last iteration.
    pub queries: Vec<Var>,
    pub n_inputs: usize,
}

impl AttentionOutput {
    pub fn final_summary(&self) -> Var {
        *self.summaries.last().expect("at least one iteration")
    }

    pub fn trace(&self, tape: &Tape<'_>) -> AttentionTrace {
        let t = self.rows.len();
        let width = self.n_inputs + t - 1;
        let weights = self
            .rows
            .iter()
            .map(|r| {
                let mut row = tape.value(*r).to_vec();
                row.resize(width, 0.0);
                row
            })
            .collect();
        AttentionTrace {
            n_inputs: self.n_inputs,
            weights,
            summaries: self.summaries.iter().map(|v| tape.value(*v).to_vec()).collect(),
            queries: self.queries.iter().map(|v| tape.value(*v).to_vec()).collect(),
        }
    }
}

/// Runs `config.iterations` attention steps over `inputs` (one vector per
/// position; `mask[i] == false` marks padding) starting from `initial_query`.
pub fn iterate(
    ctx: &mut Ctx<'_>,
    inputs: &[Var],
    mask: &[bool],
    initial_query: Var,
    params: &AttentionParams,
    config: &IramConfig,
) -> Result<AttentionOutput> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(IramError::EmptyInput("iterate"));
    }
    if mask.len() != inputs.len() {
        return Err(IramError::dim("iterate mask", &[inputs.len()], &[mask.len()]));
    }
    let mut states: Vec<Var> = inputs.to_vec();
    let mut attend_mask: Vec<bool> = mask.to_vec();
    let mut query = initial_query;
    let mut out = AttentionOutput {
        rows: Vec::with_capacity(config.iterations),
        summaries: Vec::with_capacity(config.iterations),
        queries: vec![initial_query],
        n_inputs: inputs.len(),
    };
    for t in 1..=config.iterations {
        let h = ctx.tape.stack(&states)?;
        let a = bilinear_scores(ctx, query, h, params, &attend_mask)?;
        let raw = summarize(&mut ctx.tape, a, h)?;
        let s = params.summary_highway.forward(ctx, raw)?;
        out.rows.push(a);
        out.summaries.push(s);
        if t < config.iterations {
            states.push(s);
            attend_mask.push(true);
            query = params.controller.step(ctx, s, query)?;
            out.queries.push(query);
        }
    }
    Ok(out)
}

/// Values recorded from one run of [`iterate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub n_inputs: usize,
    /// `T` rows of width `N + T - 1`.
    pub weights: Vec<Vec<f64>>,
    pub summaries: Vec<Vec<f64>>,
    pub queries: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// Builds a weights-only trace, checking the row layout.
    pub fn from_weights(n_inputs: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        let t = AttentionTrace {
            n_inputs,
            weights,
            summaries: vec![],
            queries: vec![],
        };
        t.validate(1e-9)?;
        Ok(t)
    }

    pub fn iterations(&self) -> usize {
        self.weights.len()
    }

    pub fn width(&self) -> usize {
        self.n_inputs + self.iterations() - 1
    }

    /// Checks width, nonnegativity, the trailing-zero prefix layout, and that
    /// every row sums to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let t_total = self.iterations();
        if t_total == 0 || self.n_inputs == 0 {
            return Err(IramError::EmptyInput("attention trace"));
        }
        let width = self.width();
        for (i, row) in self.weights.iter().enumerate() {
            let t = i + 1;
            if row.len() != width {
                return Err(IramError::dim("attention trace row", &[width], &[row.len()]));
            }
            if row.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(IramError::Data(format!("row {t} has a negative or NaN weight")));
            }
            if row[self.n_inputs + t - 1..].iter().any(|v| *v != 0.0) {
                return Err(IramError::Data(format!(
                    "row {t} attends to a summary that does not exist yet"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(IramError::Data(format!("row {t} sums to {s}")));
            }
        }
        Ok(())
    }

    /// `Σ_{i≠j} [A Aᵀ]_{ij}`
    pub fn offdiag_overlap_sum(&self) -> f64 {
        let mut tape = Tape::new();
        let a = self.matrix_on(&mut tape);
        let v = offdiag_gram_sum(&mut tape, a).expect("well-formed matrix");
        tape.scalar_value(v)
    }

    /// Off-diagonal overlap averaged over the `T(T-1)` ordered pairs; 0 for `T = 1`.
    pub fn mean_offdiag_overlap(&self) -> f64 {
        let t = self.iterations();
        if t < 2 {
            return 0.0;
        }
        self.offdiag_overlap_sum() / (t * (t - 1)) as f64
    }

    fn matrix_on(&self, tape: &mut Tape<'_>) -> Var {
        let data: Vec<f64> = self.weights.concat();
        tape.constant(vec![self.iterations(), self.width()], data)
            .expect("rows have equal width")
    }
}

/// `Σ_{i≠j} [A Aᵀ]_{ij}`, summing only off-diagonal Gram entries so that
/// disjoint rows give exactly zero.
fn offdiag_gram_sum(tape: &mut Tape<'_>, a: Var) -> Result<Var> {
    let t = tape.shape(a)[0];
    let at = tape.transpose(a)?;
    let gram = tape.matmul(a, at)?;
    let mask = (0..t * t).map(|k| if k / t == k % t { 0.0 } else { 1.0 }).collect();
    let mask = tape.constant(vec![t, t], mask)?;
    let off = tape.mul(gram, mask)?;
    Ok(tape.sum(off))
}

/// Differentiable overlap penalty `γ / (2T) · Σ_{i≠j} [A Aᵀ]_{ij}` over the
/// rows recorded by [`iterate`].
pub fn penalty_on_tape(tape: &mut Tape<'_>, rows: &[Var], n_inputs: usize, gamma: f64) -> Result<Var> {
    let t_total = rows.len();
    if t_total == 0 {
        return Err(IramError::EmptyInput("attention penalty"));
    }
    let width = n_inputs + t_total - 1;
    let mut padded = Vec::with_capacity(t_total);
    for (i, r) in rows.iter().enumerate() {
        let len = n_inputs + i;
        if tape.shape(*r) != [len] {
            return Err(IramError::dim("attention penalty row", tape.shape(*r), &[len]));
        }
        if len < width {
            let z = tape.zeros(vec![width - len]);
            padded.push(tape.concat(&[*r, z])?);
        } else {
            padded.push(*r);
        }
    }
    let a = tape.stack(&padded)?;
    let off = offdiag_gram_sum(tape, a)?;
    Ok(tape.scale(off, gamma / (2.0 * t_total as f64)))
}

/// Overlap penalty of a recorded trace.
pub fn attention_penalty(trace: &AttentionTrace, config: &IramConfig) -> Result<f64> {
    config.validate()?;
    if trace.iterations() == 0 {
        return Err(IramError::EmptyInput("attention penalty"));
    }
    let mut tape = Tape::new();
    let rows: Vec<Var> = trace
        .weights
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let len = trace.n_inputs + i;
            if r.len() != trace.width() {
                return Err(IramError::dim("attention penalty row", &[trace.width()], &[r.len()]));
            }
            tape.constant(vec![len], r[..len].to_vec())
        })
        .collect::<Result<_>>()?;
    let v = penalty_on_tape(&mut tape, &rows, trace.n_inputs, config.gamma)?;
    Ok(tape.scalar_value(v))
}
