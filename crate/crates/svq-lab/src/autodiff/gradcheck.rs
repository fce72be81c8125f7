//! Central-difference gradient verification.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares analytic gradients against central differences.
///
/// `f` builds a scalar loss from variables created on the supplied tape; it is
/// re-run on fresh tapes for every perturbed evaluation. Returns the largest
/// relative error `|analytic - numeric| / max(1, |analytic|)` over every
/// element of every point.
pub fn grad_check<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::param("grad_check step must be positive and finite"));
    }
    if points.is_empty() {
        return Err(Error::usage("grad_check needs at least one input point"));
    }

    let analytic: Vec<Option<Tensor>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.var(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        if !loss.scalar()?.is_finite() {
            return Err(Error::numeric("grad_check loss is not finite"));
        }
        tape.backward(loss)?;
        vars.iter().map(|v| v.grad()).collect()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        let grad = analytic[pi]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(point.shape()));
        for ei in 0..point.len() {
            let orig = point.data()[ei];

            work[pi].data_mut()[ei] = orig + step;
            let plus = eval_loss_only(&f, &work)?;
            work[pi].data_mut()[ei] = orig - step;
            let minus = eval_loss_only(&f, &work)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::numeric("finite-difference estimate is not finite"));
            }
            let a = grad.data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn eval_loss_only<F>(f: &F, tensors: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.var(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let value = loss.scalar()?;
    if !value.is_finite() {
        return Err(Error::numeric("grad_check loss is not finite"));
    }
    Ok(value)
}
