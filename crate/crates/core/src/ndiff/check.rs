use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Gradient norm under which a gradient counts as zero and errors are absolute.
pub const ZERO_SCALE: f64 = 1e-8;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Relative error `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` per input;
    /// the absolute difference when both norms are below [`ZERO_SCALE`].
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `build` records the function on a fresh graph given one parameter leaf per
/// entry of `point` and returns the scalar output.
pub fn grad_check<F>(build: F, point: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut per_input = Vec::with_capacity(point.len());
    for (k, base) in point.iter().enumerate() {
        let mut numeric = Tensor::zeros(base.rows(), base.cols());
        let mut inputs = point.to_vec();
        for e in 0..base.len() {
            let orig = base.as_slice()[e];
            inputs[k].as_mut_slice()[e] = orig + step;
            let up = eval(&inputs)?;
            inputs[k].as_mut_slice()[e] = orig - step;
            let down = eval(&inputs)?;
            inputs[k].as_mut_slice()[e] = orig;
            numeric.as_mut_slice()[e] = (up - down) / (2.0 * step);
        }
        let diff = analytic[k].zip_map(&numeric, |a, b| a - b)?.norm();
        let scale = analytic[k].norm() + numeric.norm();
        per_input.push(if scale < ZERO_SCALE { diff } else { diff / scale });
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
