//! Finite-difference verification of tape gradients.

use crate::error::NumericsError;
use crate::numerics::matrix::Matrix;
use crate::numerics::tape::{Tape, Var};

/// Compares tape gradients of a scalar-valued function against central
/// finite differences.
///
/// `f` rebuilds the computation from leaves, so the analytic and numeric
/// paths share one definition of the function while the probes stay
/// independent of the backward pass. Returns the maximum over all
/// parameter entries of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, at: &[Matrix], eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(NumericsError::EpsOutOfRange { eps });
    }

    let analytic: Vec<Matrix> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = at.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.backward(out)?;
        vars.iter().map(|&v| tape.grad(v)).collect()
    };

    let eval = |params: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.scalar_value(out)
    };

    let mut probe = at.to_vec();
    let mut max_err = 0.0f64;
    for p in 0..at.len() {
        for i in 0..at[p].data().len() {
            let original = probe[p].data()[i];
            probe[p].data_mut()[i] = original + eps;
            let plus = eval(&probe);
            probe[p].data_mut()[i] = original - eps;
            let minus = eval(&probe);
            probe[p].data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFiniteProbe { param: p, index: i });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
