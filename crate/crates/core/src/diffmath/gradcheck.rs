//! Central-finite-difference validation of reverse-mode gradients.
//!
//! Every adjoint in this crate answers to [`grad_check`]: it rebuilds the
//! loss with each parameter entry displaced by ±step and compares the
//! resulting slope against the tape's gradient.  The loss closure must be
//! deterministic — any Monte Carlo noise has to be injected as fixed
//! tensors, not drawn inside the closure.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of one [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// One (parameter name, max relative error over entries) pair per
    /// checked parameter.
    pub per_param: Vec<(String, f64)>,
    /// Maximum relative error over all entries of all parameters.
    pub max_rel_err: f64,
    /// Maximum absolute error over all entries of all parameters.
    pub max_abs_err: f64,
    /// Total number of scalar entries checked.
    pub params_checked: usize,
}

impl GradReport {
    /// The name of the parameter holding the worst entry.
    pub fn worst_param(&self) -> Option<&str> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n.as_str())
    }
}

/// Compare reverse-mode gradients of `loss` against central differences.
///
/// `loss` is evaluated once on a fresh tape per displaced entry; the
/// relative error of an entry is |analytic − numeric| / max(|numeric|, 1e-8).
pub fn grad_check<F>(loss: F, params: &[(String, Tensor)], step: f64) -> Result<GradReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "grad_check: step must be positive");

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = loss(&tape, &vars)?;
        Ok(out.value().item())
    };

    // Analytic pass.
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = loss(&tape, &vars)?;
    let base = out.value().item();
    if !base.is_finite() {
        return Err(Error::argument(
            "grad_check",
            format!("loss is non-finite ({base}) at the supplied parameters"),
        ));
    }
    let grads = out.backward();
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(v)).collect();

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0usize;

    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut param_rel: f64 = 0.0;
        for ei in 0..tensor.len() {
            let mut displaced = tensors.clone();
            let mut plus = tensor.data().to_vec();
            plus[ei] += step;
            displaced[pi] = tensor.with_data(plus);
            let f_plus = eval(&displaced)?;

            let mut minus = tensor.data().to_vec();
            minus[ei] -= step;
            displaced[pi] = tensor.with_data(minus);
            let f_minus = eval(&displaced)?;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::argument(
                    "grad_check",
                    format!("loss became non-finite while displacing {name}[{ei}]"),
                ));
            }

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[pi].data()[ei];
            let abs = (a - numeric).abs();
            let rel = abs / numeric.abs().max(1e-8);
            param_rel = param_rel.max(rel);
            max_abs = max_abs.max(abs);
            checked += 1;
        }
        max_rel = max_rel.max(param_rel);
        per_param.push((name.clone(), param_rel));
    }

    Ok(GradReport {
        per_param,
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        params_checked: checked,
    })
}
