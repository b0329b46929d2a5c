use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Argmax position (0..4, row-major inside the 2×2 window) for every pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    shape: Vec<usize>,
    indices: Vec<u8>,
}

impl PoolIndices {
    pub fn new(shape: Vec<usize>, indices: Vec<u8>) -> Result<Self> {
        if shape.len() != 4 || shape.iter().product::<usize>() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "pool indices: shape {shape:?} with {} entries",
                indices.len()
            )));
        }
        if let Some(pos) = indices.iter().position(|&i| i > 3) {
            return Err(Error::InvalidArgument(format!(
                "pool index {} at entry {pos} is outside its 2x2 window",
                indices[pos]
            )));
        }
        Ok(Self { shape, indices })
    }

    /// Pooled-output shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }
}

fn dims4(t: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("{what}: expected 4-d, got {s:?}"))),
    }
}

/// 2×2 max pooling. Ties go to the first position in row-major window order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, c, h, w) = dims4(input.shape(), "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ph, pw) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    let mut idx = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        let base = plane * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let r0 = base + 2 * py * w + 2 * px;
                let window = [x[r0], x[r0 + 1], x[r0 + w], x[r0 + w + 1]];
                let mut best = 0;
                for j in 1..4 {
                    if window[j] > window[best] {
                        best = j;
                    }
                }
                out.push(window[best]);
                idx.push(best as u8);
            }
        }
    }
    let shape = vec![n, c, ph, pw];
    Ok((
        Tensor::new(shape.clone(), out)?,
        PoolIndices { shape, indices: idx },
    ))
}

/// The linear map "read the recorded argmax positions": pooling with frozen indices.
pub fn maxpool2_at<T: Scalar>(indices: &PoolIndices, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, ph, pw) = dims4(&indices.shape, "maxpool2_at")?;
    if input.shape() != [n, c, 2 * ph, 2 * pw] {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2_at: indices for {:?} but input {:?}",
            indices.shape,
            input.shape()
        )));
    }
    let w = 2 * pw;
    let x = input.data();
    let mut out = Vec::with_capacity(indices.indices.len());
    for (i, &k) in indices.indices.iter().enumerate() {
        let plane = i / (ph * pw);
        let py = (i / pw) % ph;
        let px = i % pw;
        let k = k as usize;
        out.push(x[plane * 4 * ph * pw + (2 * py + k / 2) * w + 2 * px + k % 2]);
    }
    Tensor::new(indices.shape.clone(), out)
}

/// Scatter each pooled value back to its argmax position, zeros elsewhere.
pub fn inverse_maxpool2<T: Scalar>(input: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    let (n, c, ph, pw) = dims4(input.shape(), "inverse_maxpool2")?;
    if input.shape() != indices.shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "inverse_maxpool2: input {:?} vs indices {:?}",
            input.shape(),
            indices.shape
        )));
    }
    let w = 2 * pw;
    let mut out = Tensor::zeros(&[n, c, 2 * ph, w]);
    let dst = out.data_mut();
    for (i, (&v, &k)) in input.data().iter().zip(&indices.indices).enumerate() {
        if k > 3 {
            return Err(Error::InvalidArgument(format!(
                "pool index {k} at entry {i} is outside its 2x2 window"
            )));
        }
        let plane = i / (ph * pw);
        let py = (i / pw) % ph;
        let px = i % pw;
        let k = k as usize;
        dst[plane * 4 * ph * pw + (2 * py + k / 2) * w + 2 * px + k % 2] = v;
    }
    Ok(out)
}
