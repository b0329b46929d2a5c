use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Clipped rectifier: `max(0, min(alpha, x))`.
#[inline]
pub fn relu_alpha_scalar<T: Scalar>(x: T, alpha: T) -> T {
    x.min(alpha).max(T::zero())
}

/// Elementwise ReLUα with one `alpha` for the whole tensor.
pub fn relu_alpha<T: Scalar>(input: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "relu_alpha needs alpha > 0, got {alpha}"
        )));
    }
    Ok(input.map(|x| relu_alpha_scalar(x, alpha)))
}

/// ReLUα with a per-site `alpha` tensor shaped like one sample of `input`.
pub fn relu_alpha_sites<T: Scalar>(input: &Tensor<T>, alphas: &Tensor<T>) -> Result<Tensor<T>> {
    let per = input.sample_len();
    if alphas.len() != per {
        return Err(Error::ShapeMismatch(format!(
            "per-site alpha has {} entries, state sample has {per}",
            alphas.len()
        )));
    }
    if let Some(bad) = alphas.data().iter().find(|&&a| !(a > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "relu_alpha needs alpha > 0, got {bad}"
        )));
    }
    let mut out = input.clone();
    if per > 0 {
        for chunk in out.data_mut().chunks_mut(per) {
            for (x, &a) in chunk.iter_mut().zip(alphas.data()) {
                *x = relu_alpha_scalar(*x, a);
            }
        }
    }
    Ok(out)
}
