//! The single no-padding convolution primitive with stride and dilation.
//!
//! An input `c x d x d` tensor convolved with a `c x k x k` kernel at stride
//! `s` and dilation `b` yields a `1 x d' x d'` tensor with
//! `d' = (d - b*(k-1) - 1)/s + 1`. Specs whose output dimension is not a
//! positive integer are rejected rather than floored.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Kernel shape plus stride and dilation for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

/// Output spatial dimension `(d - b*(k-1) - 1)/s + 1`, or an error when the
/// quotient is not a positive integer.
pub fn output_dim(d: usize, k: usize, s: usize, b: usize) -> Result<usize> {
    if d == 0 || k == 0 || s == 0 || b == 0 {
        return Err(Error::InvalidShape(format!(
            "output_dim args must be >= 1, got d={d} k={k} s={s} b={b}"
        )));
    }
    let span = b * (k - 1) + 1;
    if span > d {
        return Err(Error::InvalidShape(format!(
            "kernel span {span} exceeds input dim {d} (k={k}, b={b})"
        )));
    }
    let numer = d - span;
    if numer % s != 0 {
        return Err(Error::InvalidShape(format!(
            "non-integral output dim: ({d} - {b}*({k}-1) - 1)/{s} + 1"
        )));
    }
    Ok(numer / s + 1)
}

/// Exact multiply-accumulate count `d'^2 * c * k^2` for one convolution.
pub fn mac_count(d: usize, spec: &ConvSpec) -> Result<usize> {
    let dp = output_dim(d, spec.kernel, spec.stride, spec.dilation)?;
    Ok(dp * dp * spec.in_channels * spec.kernel * spec.kernel)
}

/// Valid (no-padding) convolution producing a single output channel.
pub fn conv2d(x: &Tensor3, kernel: &Tensor3, stride: usize, dilation: usize) -> Result<Tensor3> {
    if kernel.channels() != x.channels() {
        return Err(Error::InvalidShape(format!(
            "kernel has {} channels, input has {}",
            kernel.channels(),
            x.channels()
        )));
    }
    let d = x.dim();
    let k = kernel.dim();
    let dp = output_dim(d, k, stride, dilation)?;
    let mut out = Tensor3::zeros(1, dp);
    for i in 0..dp {
        for j in 0..dp {
            let mut acc = 0.0;
            for h in 0..x.channels() {
                for ki in 0..k {
                    for kj in 0..k {
                        acc += x.get(h, stride * i + dilation * ki, stride * j + dilation * kj)
                            * kernel.get(h, ki, kj);
                    }
                }
            }
            out.set(0, i, j, acc);
        }
    }
    Ok(out)
}
