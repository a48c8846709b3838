//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Largest mismatch found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub worst_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Mismatch measure `|a - n| / max(|a|, |n|, floor)`: relative for
/// gradients above `floor`, absolute (scaled by `floor`) below it.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` with central differences of step `h`
/// for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |perturbed: &[Tensor]| -> f64 {
        let tape = Tape::no_grad();
        let leaves: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &leaves).item()
    };

    let mut report = GradCheck {
        worst_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.wrt(leaves[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[i];
            let err = rel_error(analytic, numeric, floor);
            report.checked += 1;
            if err > report.worst_rel_error {
                report = GradCheck {
                    worst_rel_error: err,
                    worst_input: k,
                    worst_index: i,
                    analytic,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    report
}
