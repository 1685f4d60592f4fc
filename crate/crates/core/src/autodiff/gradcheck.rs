//! Central-difference verification of tape gradients, run in `f64`.

use super::array::Array;
use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Magnitude below which a gradient is compared absolutely rather than
/// relatively: `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_scalar<F>(params: &ParamSet<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = f(&mut tape, &bound)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", format!("closure must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares `backward` against the five-point central difference
/// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h` (truncation error
/// O(h⁴)) for every coordinate of every parameter, or for the coordinates
/// selected by `stride` (1 = all).
pub fn grad_check_params_strided<F>(params: &ParamSet<f64>, h: f64, stride: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = f(&mut tape, &bound)?;
    let mut grads = tape.backward(out)?;
    let analytic = bound.gradients(&mut grads)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };
    let mut probe = params.clone();
    let stride = stride.max(1);
    for (name, grad) in analytic.iter() {
        for i in (0..grad.len()).step_by(stride) {
            let orig = probe.get(name).unwrap().data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(name).unwrap().data_mut()[i] = orig + offset;
                eval_scalar(&probe, &f)
            };
            let (m2, m1, p1, p2) = (at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?);
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
            let err = relative_error(grad.data()[i], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

pub fn grad_check_params<F>(params: &ParamSet<f64>, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    grad_check_params_strided(params, h, 1, f)
}

/// Single-input form: `op` maps the input array to a scalar.
pub fn grad_check<F>(op: F, input: &Array<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut params = ParamSet::new();
    params.insert("x", input.clone())?;
    let report = grad_check_params(&params, h, |tape, b| op(tape, b.get("x")?))?;
    Ok(report.max_rel_err)
}
