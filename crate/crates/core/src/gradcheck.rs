//! Central finite-difference gradient checking against the tape.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Step for `(f(x+h) − f(x−h)) / 2h`.
    pub step: f64,
    /// Largest accepted elementwise relative error.
    pub tolerance: f64,
    /// Magnitude below which differences are compared absolutely; keeps
    /// round-off in near-zero gradients from reading as relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract {
            reason: "gradient check needs a scalar function",
        });
    }
    Ok(tape.scalar(out))
}

/// Analytic gradient of `f` at `inputs`, one buffer per input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| alloc::vec![0.0; t.numel()])
        })
        .collect())
}

/// Central-difference gradient of `f` at `inputs`.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + step;
            let plus = evaluate(&work, f)?;
            work[i].data_mut()[j] = x - step;
            let minus = evaluate(&work, f)?;
            work[i].data_mut()[j] = x;
            g.push((plus - minus) / (2.0 * step));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares tape gradients of a scalar function with central differences.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, cfg: &GradCheck) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f, cfg.step)?;
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&ga, &gn)) in a.iter().zip(n).enumerate() {
            let e = relative_error(ga, gn, cfg.floor);
            report.checked += 1;
            if e > report.max_rel_error || e.is_nan() {
                report.max_rel_error = e;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of clamp outside its range is zero analytically but the
        // difference quotient straddles the kink at the boundary.
        let x = Tensor::vector(alloc::vec![1.0]);
        let cfg = GradCheck::default();
        let r = check_gradients(&[x], |t, v| t.clamp(v[0], -1.0, 1.0), &cfg).unwrap();
        assert!(!r.passed(cfg.tolerance));
    }

    #[test]
    fn relative_error_uses_floor_for_small_values() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-3), 1e-6);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
    }
}
