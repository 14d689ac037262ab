//! Central finite differences, used to validate reverse-mode gradients.

use crate::error::Result;
use crate::params::{Ctx, GradBuffer, Params};
use crate::tensor::{Tape, Tensor, Var};

/// Denominator floor for [`relative_error`], so that two gradients that are
/// both numerically zero compare as equal.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn central_differences<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub(crate) fn empty() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    pub(crate) fn update(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error {
            *self = GradCheckReport {
                max_rel_error: e,
                worst: (input, elem),
                analytic,
                numeric,
            };
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.input(&t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.input(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar_value(out))
    };

    let mut report = GradCheckReport::empty();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        for (j, (&x, &a)) in t.data().iter().zip(&analytic).enumerate() {
            probe[i].data_mut()[j] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x;
            report.update(i, j, a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Compares `analytic` against central differences of `loss` for every
/// element of every trainable parameter. The report's `worst.0` is the
/// parameter index.
pub fn compare_param_gradients<F>(params: &Params, analytic: &GradBuffer, loss: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Params) -> Result<f64>,
{
    let mut report = GradCheckReport::empty();
    let mut probe = params.clone();
    for id in params.ids() {
        let t = params.get(id);
        if !t.requires_grad() {
            continue;
        }
        for j in 0..t.numel() {
            let x = t.data()[j];
            probe.get_mut(id).data_mut()[j] = x + h;
            let up = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = x - h;
            let down = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = x;
            let a = analytic.get(id).map_or(0.0, |g| g[j]);
            report.update(id.index(), j, a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Parameter-gradient check for a loss built on an eval-mode [`Ctx`].
pub fn check_param_gradients<F>(params: &Params, f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<'_>) -> Result<Var>,
{
    let mut ctx = Ctx::eval(params);
    let out = f(&mut ctx)?;
    let analytic = ctx.backward(out)?;
    compare_param_gradients(
        params,
        &analytic,
        |p| {
            let mut ctx = Ctx::eval(p);
            let out = f(&mut ctx)?;
            Ok(ctx.tape.scalar_value(out))
        },
        h,
    )
}
