use super::{Scalar, Tensor};
use crate::{Error, Result};

fn check(weights: &Tensor<impl Scalar>, per_sample: usize, cols: bool) -> Result<(usize, usize)> {
    let [out_dim, in_dim] = *weights.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "dense weights must be 2-d, got {:?}",
            weights.shape()
        )));
    };
    let expected = if cols { in_dim } else { out_dim };
    if per_sample != expected {
        return Err(Error::ShapeMismatch(format!(
            "dense weights {out_dim}x{in_dim} applied to {per_sample} values per sample"
        )));
    }
    Ok((out_dim, in_dim))
}

/// `y_b = W x_b` for every batch element; input is flattened per sample.
/// Output shape is `(N, out_dim, 1, 1)`.
pub fn dense<T: Scalar>(weights: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = check(weights, input.sample_len(), true)?;
    let n = input.batch();
    let w = weights.data();
    let mut out = Vec::with_capacity(n * out_dim);
    for b in 0..n {
        let x = input.sample(b);
        for row in w.chunks(in_dim.max(1)).take(out_dim) {
            out.push(row.iter().zip(x).fold(T::zero(), |acc, (&a, &v)| acc + a * v));
        }
    }
    Tensor::new(vec![n, out_dim, 1, 1], out)
}

/// `x_b = Wᵀ y_b`, reshaped to `from_shape` (one sample's shape, without batch).
pub fn dense_transpose<T: Scalar>(
    weights: &Tensor<T>,
    input: &Tensor<T>,
    from_shape: &[usize],
) -> Result<Tensor<T>> {
    let (_, in_dim) = check(weights, input.sample_len(), false)?;
    if from_shape.iter().product::<usize>() != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense_transpose target {from_shape:?} does not hold {in_dim} values"
        )));
    }
    let n = input.batch();
    let w = weights.data();
    let mut out = vec![T::zero(); n * in_dim];
    for b in 0..n {
        let y = input.sample(b);
        let x = &mut out[b * in_dim..(b + 1) * in_dim];
        for (o, &yo) in y.iter().enumerate() {
            for (xi, &wi) in x.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                *xi += wi * yo;
            }
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(from_shape);
    Tensor::new(shape, out)
}

/// `Σ_b y_b x_bᵀ`: gradient of `Σ_b y_b · (W x_b)` with respect to `W`.
pub fn dense_weight_grad<T: Scalar>(
    weights_shape: &[usize],
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [out_dim, in_dim] = *weights_shape else {
        return Err(Error::ShapeMismatch(format!(
            "dense weights must be 2-d, got {weights_shape:?}"
        )));
    };
    if input.sample_len() != in_dim
        || upstream.sample_len() != out_dim
        || input.batch() != upstream.batch()
    {
        return Err(Error::ShapeMismatch(format!(
            "dense_weight_grad: weights {weights_shape:?}, input {:?}, upstream {:?}",
            input.shape(),
            upstream.shape()
        )));
    }
    let mut grad = Tensor::zeros(weights_shape);
    let g = grad.data_mut();
    for b in 0..input.batch() {
        let x = input.sample(b);
        for (o, &yo) in upstream.sample(b).iter().enumerate() {
            for (gi, &xi) in g[o * in_dim..(o + 1) * in_dim].iter_mut().zip(x) {
                *gi += yo * xi;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_product() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(dense(&w, &x).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_matrix_copies_input() {
        let w = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, 9.0]).unwrap();
        assert_eq!(dense(&w, &x).unwrap().data(), x.data());
        assert_eq!(dense_transpose(&w, &x, &[3]).unwrap().data(), x.data());
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = Tensor::<f64>::from_fn(&[4, 12], |_| rng.random_range(-1.0..1.0));
        let a = Tensor::from_fn(&[3, 3, 2, 2], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn(&[3, 4, 1, 1], |_| rng.random_range(-1.0..1.0));
        let lhs = dense(&w, &a).unwrap().dot(&b).unwrap();
        let rhs = a.dot(&dense_transpose(&w, &b, &[3, 2, 2]).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn weight_grad_is_outer_product() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let g = dense_weight_grad(&[1, 2], &x, &y).unwrap();
        assert_eq!(g.data(), &[3.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        assert!(dense(&w, &Tensor::zeros(&[1, 2])).is_err());
        assert!(dense_transpose(&w, &Tensor::zeros(&[1, 3]), &[3]).is_err());
    }
}
