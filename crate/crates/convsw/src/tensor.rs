//! Dense image tensors and empirical measures over them.
//!
//! A [`Tensor3`] is a `c x d x d` tensor stored row-major as
//! `[channel][row][col]`. All arithmetic in this crate is `f64`.

use crate::error::{Error, Result};

/// A `c x d x d` real tensor with square spatial dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Builds a tensor from row-major `[channel][row][col]` data.
    pub fn new(channels: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || dim == 0 {
            return Err(Error::InvalidShape(format!(
                "zero shape {channels}x{dim}x{dim}"
            )));
        }
        if data.len() != channels * dim * dim {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match {channels}x{dim}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidShape("non-finite entry".into()));
        }
        Ok(Self { channels, dim, data })
    }

    pub fn zeros(channels: usize, dim: usize) -> Self {
        Self {
            channels,
            dim,
            data: vec![0.0; channels * dim * dim],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.dim + row) * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.dim + row) * self.dim + col] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales every entry in place by `alpha`.
    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }
}

/// Row-major flattening of a tensor into a vector of length `c*d*d`.
pub fn vectorize(x: &Tensor3) -> Vec<f64> {
    x.data.clone()
}

/// Inverse of [`vectorize`]; the round-trip is bit-exact.
pub fn devectorize(channels: usize, dim: usize, v: Vec<f64>) -> Result<Tensor3> {
    Tensor3::new(channels, dim, v)
}

/// A finite collection of equally weighted tensor supports.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    supports: Vec<Tensor3>,
}

impl EmpiricalMeasure {
    /// All supports must share the same shape; at least one is required.
    pub fn new(supports: Vec<Tensor3>) -> Result<Self> {
        let first = supports
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty measure".into()))?;
        let (c, d) = (first.channels(), first.dim());
        if supports.iter().any(|s| s.channels() != c || s.dim() != d) {
            return Err(Error::InvalidShape("supports have mixed shapes".into()));
        }
        Ok(Self { supports })
    }

    pub fn supports(&self) -> &[Tensor3] {
        &self.supports
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.supports[0].channels()
    }

    pub fn dim(&self) -> usize {
        self.supports[0].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectorize_is_row_major() {
        let x = Tensor3::new(1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(vectorize(&x), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vectorize_round_trip_exact() {
        let x = Tensor3::new(2, 3, (0..18).map(|i| i as f64 * 0.37).collect()).unwrap();
        let v = vectorize(&x);
        let y = devectorize(2, 3, v).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zeros_vectorize_to_zero_vector() {
        let x = Tensor3::zeros(3, 4);
        assert!(vectorize(&x).iter().all(|&v| v == 0.0));
        assert_eq!(vectorize(&x).len(), 3 * 16);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor3::new(0, 2, vec![]).is_err());
        assert!(Tensor3::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Tensor3::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn measure_requires_uniform_shape() {
        let a = Tensor3::zeros(1, 2);
        let b = Tensor3::zeros(1, 3);
        assert!(EmpiricalMeasure::new(vec![a.clone(), b]).is_err());
        assert!(EmpiricalMeasure::new(vec![]).is_err());
        assert_eq!(EmpiricalMeasure::new(vec![a]).unwrap().len(), 1);
    }
}
