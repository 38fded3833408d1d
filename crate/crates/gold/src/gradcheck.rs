//! Central finite-difference gradient checking.
//!
//! Used by tests to validate analytic gradients; deliberately knows nothing
//! about how the tape computes its backward pass.

use ndarray::Array2;

use crate::tensor::nn::Fwd;
use crate::tensor::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Tape, Var};

/// Result of comparing one input's analytic gradient to finite differences.
#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Compare analytic gradients of `f` (a scalar-valued tape program over the
/// given inputs) against central finite differences.
///
/// `rel_err = |a - n| / max(|a|, |n|, floor)` per entry; the max over all
/// entries of all inputs is returned.
pub fn check_gradients<F>(inputs: &[Array2<f64>], eps: f64, floor: f64, f: F) -> GradReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let build = |values: &[Array2<f64>]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };

    let (tape, vars, out) = build(inputs);
    let grads = tape.backward(out);

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut values: Vec<Array2<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads[var.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(inputs[i].dim()));
        let (rows, cols) = inputs[i].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = values[i][[r, c]];
                values[i][[r, c]] = orig + eps;
                let (tp, _, o) = build(&values);
                let fp = tp.scalar(o);
                values[i][[r, c]] = orig - eps;
                let (tm, _, o) = build(&values);
                let fm = tm.scalar(o);
                values[i][[r, c]] = orig;
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic[[r, c]];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(floor);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
            }
        }
    }
    GradReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
    }
}

/// Compare analytic gradients with respect to stored parameters against
/// central finite differences. `f` evaluates a scalar loss given a fresh
/// forward-pass environment; it must be a pure function of the parameter
/// values (use injected noise for stochastic models).
pub fn check_param_gradients<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    floor: f64,
    mut f: F,
) -> GradReport
where
    F: FnMut(&mut Fwd) -> Var,
{
    let analytic: Vec<Array2<f64>> = {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut fwd = Fwd::new(&mut tape, store, &mut binding);
        let out = f(&mut fwd);
        let grads = tape.backward(out);
        let by_id = binding.gradients(&grads);
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(store.value(*id).dim()))
            })
            .collect()
    };

    let eval = |store: &ParamStore, f: &mut F| -> f64 {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut fwd = Fwd::new(&mut tape, store, &mut binding);
        let out = f(&mut fwd);
        tape.scalar(out)
    };

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (idx, &id) in ids.iter().enumerate() {
        let (rows, cols) = store.value(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = store.value(id)[[r, c]];
                let mut central = |h: f64| -> f64 {
                    let mut perturbed = store.value(id).clone();
                    perturbed[[r, c]] = orig + h;
                    store.set_value(id, perturbed.clone());
                    let fp = eval(store, &mut f);
                    perturbed[[r, c]] = orig - h;
                    store.set_value(id, perturbed.clone());
                    let fm = eval(store, &mut f);
                    perturbed[[r, c]] = orig;
                    store.set_value(id, perturbed);
                    (fp - fm) / (2.0 * h)
                };
                let a = analytic[idx][[r, c]];
                // A second, much smaller step sidesteps piecewise-linear
                // kinks (e.g. a ReLU preactivation within eps of zero)
                // that the wide step straddles; genuine gradient bugs
                // disagree at both step sizes.
                let wide = central(eps);
                let numeric = if (a - wide).abs()
                    / a.abs().max(wide.abs()).max(floor)
                    > 1e-5
                {
                    let narrow = central(eps / 64.0);
                    if (a - narrow).abs() < (a - wide).abs() {
                        narrow
                    } else {
                        wide
                    }
                } else {
                    wide
                };
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(floor);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
            }
        }
    }
    GradReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
    }
}
