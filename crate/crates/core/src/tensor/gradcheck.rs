//! Central finite-difference gradient checks.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the
    /// probed coordinates.
    pub rel_error: f64,
}

/// Norm-wise relative error between two gradient vectors (0 if both vanish).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences of step `h` at the `(input, element)` coordinates in `probes`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    probes: &[(usize, usize)],
    h: f64,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = probes
        .iter()
        .map(|&(i, j)| grads.wrt(vars[i]).data()[j])
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };
    let mut numeric = Vec::with_capacity(probes.len());
    for &(i, j) in probes {
        let mut shifted = inputs.to_vec();
        let base = inputs[i].data().to_vec();
        let mut plus = base.clone();
        plus[j] += h;
        shifted[i] = Tensor::new(inputs[i].shape(), plus)?;
        let fp = eval(&shifted)?;
        let mut minus = base;
        minus[j] -= h;
        shifted[i] = Tensor::new(inputs[i].shape(), minus)?;
        let fm = eval(&shifted)?;
        numeric.push((fp - fm) / (2.0 * h));
    }
    let rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        rel_error,
    })
}

/// Every coordinate of every input.
pub fn all_probes(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect()
}
