//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it is an
//! independent route to the same derivatives.

use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor for [`relative_error`]; below it the comparison is absolute.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences with the given `step`, for every element of every
/// named input. A missing analytic gradient counts as zero.
pub fn check<F>(inputs: &BTreeMap<String, Tensor>, step: f64, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |inputs: &BTreeMap<String, Tensor>, as_params: bool| -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let vars = inputs
            .iter()
            .map(|(k, t)| {
                let v = if as_params {
                    g.param(k.clone(), t)
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(NumError::Contract("gradient check needs a scalar output".into()));
        }
        Ok((g, out))
    };

    let (g, out) = eval(inputs, true)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.clone();
    for (name, t) in inputs {
        let analytic = grads.param(name);
        for j in 0..t.len() {
            let x0 = t.data()[j];
            work.get_mut(name).unwrap().data_mut()[j] = x0 + step;
            let (gp, op) = eval(&work, false)?;
            let fp = gp.value(op).data()[0];
            work.get_mut(name).unwrap().data_mut()[j] = x0 - step;
            let (gm, om) = eval(&work, false)?;
            let fm = gm.value(om).data()[0];
            work.get_mut(name).unwrap().data_mut()[j] = x0;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), j));
                }
            }
        }
    }
    Ok(report)
}
