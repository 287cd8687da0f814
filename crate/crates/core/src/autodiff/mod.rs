//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
mod suite;
mod tensor;

pub use graph::{Graph, Var};
pub use suite::{primitive_checks, CheckResult};
pub use tensor::Tensor;

use crate::error::{Error, Result};

const GRAD_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of a scalar function with central
/// differences of step `h` and returns the largest relative error,
/// `|a - b| / max(|a|, |b|, 1e-6)`, over every element of every input.
///
/// The floor keeps gradients near zero, whose central differences are
/// dominated by rounding in the function value, from reading as large
/// relative errors.
///
/// `build` receives a fresh graph and one trainable leaf per input and must
/// return the scalar output.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut point = inputs.to_vec();
    let mut worst = 0.0f64;
    for t in 0..inputs.len() {
        for e in 0..inputs[t].numel() {
            let x0 = inputs[t].data()[e];
            point[t].data_mut()[e] = x0 + h;
            let up = eval(&point)?;
            point[t].data_mut()[e] = x0 - h;
            let down = eval(&point)?;
            point[t].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t].data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
