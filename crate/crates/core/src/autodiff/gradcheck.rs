//! Central-difference gradient checking. Uses only forward evaluation, so it
//! is independent of the backward rules it checks.

use super::{AutodiffError, Tape, Var};
use crate::matrix::Matrix;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of `f(inputs)` against central differences with
/// step `h`, for every entry of every input.
pub fn check_gradients<'g, F>(inputs: &[Matrix], h: f64, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |xs: &[Matrix]| -> Result<f64, AutodiffError> {
        let mut t: Tape<'g> = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|m| t.param(m.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };

    let mut t: Tape<'g> = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| t.param(m.clone())).collect();
    let out = f(&mut t, &vars)?;
    t.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| t.grad(v)).collect();

    let mut report = GradCheck::default();
    let mut xs = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for k in 0..xs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(a.data()[k], numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a.data()[k] - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, k);
            }
        }
    }
    Ok(report)
}
