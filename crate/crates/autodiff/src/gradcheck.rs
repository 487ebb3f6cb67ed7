//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Coordinates whose probes moved the graph across a relu, max-pool, MAE
    /// or L1 kink (see [`Tape::piecewise_pattern`]). Central differences are
    /// not a valid oracle there, so a meaningful check wants this at zero.
    pub pattern_changes: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `graph` against
/// central differences with step `rel_step * max(1, |x|)`, over every element
/// of every input.
pub fn grad_check<G>(graph: G, inputs: &[Tensor<f64>], rel_step: f64) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = graph(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.piecewise_pattern()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = graph(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let pattern = tape.piecewise_pattern();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
        pattern_changes: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zeros);
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let h = rel_step * x.abs().max(1.0);
            probe[i].data_mut()[j] = x + h;
            let (plus, p_plus) = eval(&probe)?;
            probe[i].data_mut()[j] = x - h;
            let (minus, p_minus) = eval(&probe)?;
            if p_plus != pattern || p_minus != pattern {
                report.pattern_changes += 1;
            }
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[j], numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
