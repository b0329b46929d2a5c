use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Borrowed view of a stride-1 kernel `(out_channels, in_channels, k, k)` with `k ∈ {1, 3}`
/// and "same" padding.
#[derive(Debug, Clone, Copy)]
pub struct ConvKernel<'a, T> {
    weights: &'a Tensor<T>,
    padding: usize,
}

impl<'a, T: Scalar> ConvKernel<'a, T> {
    pub fn new(weights: &'a Tensor<T>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be 4-d, got {s:?}"
            )));
        }
        if s[2] != s[3] || !(s[2] == 1 || s[2] == 3) {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be 1x1 or 3x3, got {}x{}",
                s[2], s[3]
            )));
        }
        Ok(Self {
            weights,
            padding: s[2] / 2,
        })
    }

    pub fn weights(&self) -> &Tensor<T> {
        self.weights
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    fn size(&self) -> usize {
        self.weights.shape()[2]
    }
}

fn spatial(input: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *input.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("{what}: expected 4-d input, got {s:?}"))),
    }
}

/// Unfold one `(c, h, w)` sample into `(c·k·k, h·w)` columns.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, d) in dst.iter_mut().enumerate() {
                        let sx = x_out as isize + kx as isize - pad as isize;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, x: &mut [T]) {
    let hw = h * w;
    x.fill(T::zero());
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, &v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x_out as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 cross-correlation `(N, C, H, W) -> (N, O, H, W)`, zero bias.
pub fn conv2d<T: Scalar>(kernel: &ConvKernel<'_, T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = spatial(input, "conv2d")?;
    if c != kernel.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: kernel expects {} input channels, input has {c}",
            kernel.in_channels()
        )));
    }
    let (o, k, pad) = (kernel.out_channels(), kernel.size(), kernel.padding());
    let hw = h * w;
    let kk = c * k * k;
    let mut out = Tensor::zeros(&[n, o, h, w]);
    if hw == 0 || o == 0 {
        return Ok(out);
    }
    let weights = kernel.weights().data();
    out.data_mut()
        .par_chunks_mut(o * hw)
        .zip(input.data().par_chunks(c * hw))
        .for_each_init(
            || vec![T::zero(); if k == 1 { 0 } else { kk * hw }],
            |cols, (y, x)| {
                let cols: &[T] = if k == 1 {
                    x
                } else {
                    im2col(x, c, h, w, k, pad, cols);
                    cols
                };
                T::gemm(o, kk, hw, weights, false, cols, false, T::zero(), y);
            },
        );
    Ok(out)
}

/// Exact adjoint of [`conv2d`]: `(N, O, H, W) -> (N, C, H, W)`.
pub fn conv2d_transpose<T: Scalar>(
    kernel: &ConvKernel<'_, T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, o, h, w) = spatial(input, "conv2d_transpose")?;
    if o != kernel.out_channels() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_transpose: kernel has {} output channels, input has {o}",
            kernel.out_channels()
        )));
    }
    let (c, k, pad) = (kernel.in_channels(), kernel.size(), kernel.padding());
    let hw = h * w;
    let kk = c * k * k;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    if hw == 0 || c == 0 {
        return Ok(out);
    }
    let weights = kernel.weights().data();
    out.data_mut()
        .par_chunks_mut(c * hw)
        .zip(input.data().par_chunks(o * hw))
        .for_each_init(
            || vec![T::zero(); if k == 1 { 0 } else { kk * hw }],
            |cols, (x, y)| {
                if k == 1 {
                    T::gemm(c, o, hw, weights, true, y, false, T::zero(), x);
                } else {
                    T::gemm(kk, o, hw, weights, true, y, false, T::zero(), cols);
                    col2im(cols, c, h, w, k, pad, x);
                }
            },
        );
    Ok(out)
}

/// Gradient of `Σ_batch dot(upstream, conv2d(w, input))` with respect to `w`, i.e. the
/// cross-correlation of `input` with `upstream`, summed over the batch.
pub fn conv2d_weight_grad<T: Scalar>(
    kernel_shape: &[usize],
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = spatial(input, "conv2d_weight_grad")?;
    let (n2, o, h2, w2) = spatial(upstream, "conv2d_weight_grad")?;
    if kernel_shape.len() != 4
        || n != n2
        || (h, w) != (h2, w2)
        || kernel_shape[0] != o
        || kernel_shape[1] != c
    {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_weight_grad: kernel {kernel_shape:?}, input {:?}, upstream {:?}",
            input.shape(),
            upstream.shape()
        )));
    }
    let k = kernel_shape[2];
    let pad = k / 2;
    let hw = h * w;
    let kk = c * k * k;
    let mut grad = Tensor::zeros(kernel_shape);
    let mut cols = vec![T::zero(); if k == 1 { 0 } else { kk * hw }];
    for i in 0..n {
        let x = input.sample(i);
        let cols: &[T] = if k == 1 {
            x
        } else {
            im2col(x, c, h, w, k, pad, &mut cols);
            &cols
        };
        T::gemm(o, hw, kk, upstream.sample(i), false, cols, true, T::one(), grad.data_mut());
    }
    Ok(grad)
}

/// The transposed-convolution kernel: spatially flipped, input and output channels swapped.
/// `conv2d(flip_kernel(w), y) == conv2d_transpose(w, y)`.
pub fn flip_kernel<T: Scalar>(weights: &Tensor<T>) -> Result<Tensor<T>> {
    let [o, c, kh, kw] = *weights.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "flip_kernel expects 4-d, got {:?}",
            weights.shape()
        )));
    };
    let src = weights.data();
    let mut out = Tensor::zeros(&[c, o, kh, kw]);
    let dst = out.data_mut();
    for oi in 0..o {
        for ci in 0..c {
            for y in 0..kh {
                for x in 0..kw {
                    dst[((ci * o + oi) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                        src[((oi * c + ci) * kh + y) * kw + x];
                }
            }
        }
    }
    Ok(out)
}
