//! Parameter initialization helpers.

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform init in `±√(6/(fan_in+fan_out))`.
///
/// The last axis counts as fan-in and the product of the remaining axes
/// as fan-out, which covers matrices `[out, in]` and the third-order
/// tensor `[d, d, k_v]` alike.
pub(crate) fn xavier<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in = *shape.last().expect("non-empty shape");
    let fan_out: usize = shape[..shape.len() - 1].iter().product();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}
