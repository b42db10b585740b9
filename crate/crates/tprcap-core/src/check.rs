//! Finite-difference gradient verification.
//!
//! A checked function builds a fresh graph from perturbed leaf values, so
//! central differences probe the same computation the tape differentiates.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Step size for central differences.
pub const GRADCHECK_EPS: f64 = 1e-5;
/// Acceptance threshold on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Denominator floor so near-zero coordinates compare absolutely.
pub const REL_FLOOR: f64 = 1e-2;

/// Relative error with an absolute floor:
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along coordinate `coord` of input `input_idx`.
///
/// `f` maps a full set of input tensors to a scalar loss.
pub fn finite_diff<F>(
    f: &mut F,
    inputs: &[Tensor],
    input_idx: usize,
    coord: usize,
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut plus = inputs.to_vec();
    plus[input_idx].data_mut()[coord] += eps;
    let mut minus = inputs.to_vec();
    minus[input_idx].data_mut()[coord] -= eps;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * eps))
}

/// Worst observed mismatch of a gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub worst_rel_err: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central differences on a random
/// subset of coordinates.
///
/// `f` maps input tensors to a scalar loss; `grads` holds the analytic
/// gradient per input (same shapes as `inputs`). Up to `per_tensor`
/// coordinates are sampled from each input without replacement.
pub fn gradcheck_inputs<F, R>(
    f: &mut F,
    inputs: &[Tensor],
    grads: &[Tensor],
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
    R: Rng,
{
    assert_eq!(inputs.len(), grads.len(), "one gradient per input");
    let mut report = GradReport {
        worst_rel_err: 0.0,
        worst_input: 0,
        worst_coord: 0,
        coords_checked: 0,
    };
    for (idx, (input, grad)) in inputs.iter().zip(grads).enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            // Sample distinct coordinates; n is small enough that retrying is fine.
            let mut picked = Vec::with_capacity(per_tensor);
            while picked.len() < per_tensor {
                let c = rng.random_range(0..n);
                if !picked.contains(&c) {
                    picked.push(c);
                }
            }
            picked
        };
        for c in coords {
            let numeric = finite_diff(f, inputs, idx, c, GRADCHECK_EPS)?;
            let err = rel_err(grad.data()[c], numeric);
            report.coords_checked += 1;
            if err > report.worst_rel_err {
                report.worst_rel_err = err;
                report.worst_input = idx;
                report.worst_coord = c;
            }
        }
    }
    Ok(report)
}
