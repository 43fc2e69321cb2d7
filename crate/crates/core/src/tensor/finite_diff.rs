//! Central-difference gradient oracle, independent of the autodiff graph.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Derivative of `f` at `theta`, one coordinate at a time:
/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, theta: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = theta.clone();
    probe.requires_grad = false;
    probe.grad = None;
    let mut out = Vec::with_capacity(theta.numel());
    for i in 0..theta.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around coordinate {i} ({plus}, {minus})"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(theta.shape().to_vec(), out)
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting spurious relative blow-ups.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
