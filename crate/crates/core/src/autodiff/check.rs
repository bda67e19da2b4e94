//! Central finite-difference validation of tape gradients.

use serde::Serialize;

use super::tape::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Floor on the relative-error denominator. Entries whose gradient is smaller
/// than this are effectively held to an absolute tolerance of `tol * floor`
/// instead of dividing finite-difference noise by a near-zero magnitude.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub pass: bool,
}

fn evaluate<F>(f: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let v = tape.scalar(root);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("gradient_check probe evaluated to {v}")));
    }
    Ok(v)
}

/// Compare taped gradients of `f` against central differences at `inputs`.
///
/// `f` receives one differentiable leaf per input and must return a 1×1 node.
pub fn gradient_check<F>(f: F, inputs: &[Matrix], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.scalar(root).is_finite() {
        return Err(Error::NonFinite("gradient_check objective".into()));
    }
    let grads = tape.backward(root)?;

    let mut probe: Vec<Matrix> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for idx in 0..inputs[k].len() {
            let orig = inputs[k][idx];
            probe[k][idx] = orig + eps;
            let fp = evaluate(&f, &probe)?;
            probe[k][idx] = orig - eps;
            let fm = evaluate(&f, &probe)?;
            probe[k][idx] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[idx];
            let abs = (a - numeric).abs();
            max_abs = max_abs.max(abs);
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        checked,
        pass: max_rel <= tol,
    })
}
