//! Dense n-dimensional arrays.
//!
//! A [`Tensor`] is an immutable value: once it lands on the autodiff tape it
//! is never mutated. Cloning shares the underlying buffer; the optimizer uses
//! copy-on-write when it rewrites parameter values between steps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} (= {} elements)",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![S::zero(); n]),
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; n]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(v: S) -> Self {
        Self::full(&[1], v)
    }

    /// Uniform in [-bound, bound), drawn from a keyed stream.
    pub fn uniform(shape: &[usize], bound: f64, stream: &mut Stream) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::of(stream.range(-bound, bound))).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    /// Standard normal entries scaled by `scale`.
    pub fn randn(shape: &[usize], scale: f64, stream: &mut Stream) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::of(stream.normal() * scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    /// Mutable access; clones the buffer only when shared.
    pub fn make_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Same buffer, new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(format!(
                "cannot view {:?} as {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Value at a multi-index (row-major).
    pub fn at(&self, idx: &[usize]) -> S {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} ({dim})");
            off = off * dim + ix;
        }
        self.data[off]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    /// Error if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite value {v} at flat index {i} in {context}"
                )));
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        if self.is_empty() {
            S::zero()
        } else {
            self.sum() / S::of(self.len() as f64)
        }
    }

    /// Population variance.
    pub fn var(&self) -> S {
        if self.is_empty() {
            return S::zero();
        }
        let m = self.mean();
        self.data
            .iter()
            .map(|&x| (x - m) * (x - m))
            .sum::<S>()
            / S::of(self.len() as f64)
    }

    pub fn min(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    /// self += other, in place (copy-on-write).
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch in add_assign: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let dst = self.make_mut();
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
        Ok(())
    }

    /// Cast every element through f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| T::of(x.to_f64_lossy())).collect()),
        }
    }

    /// Max of |a - b| over all elements.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(T::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(T::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn at_is_row_major() {
        let t = T::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0]), 0.0);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert_eq!(t.at(&[1, 2]), 5.0);
    }

    #[test]
    fn ensure_finite_catches_nan_and_inf() {
        let t = T::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.ensure_finite("test").is_err());
        let t = T::from_vec(&[2], vec![1.0, f64::INFINITY]).unwrap();
        assert!(t.ensure_finite("test").is_err());
        let t = T::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        assert!(t.ensure_finite("test").is_ok());
    }

    #[test]
    fn clone_shares_until_mutated() {
        let mut a = T::zeros(&[4]);
        let b = a.clone();
        a.make_mut()[0] = 5.0;
        assert_eq!(b.as_slice()[0], 0.0);
        assert_eq!(a.as_slice()[0], 5.0);
    }

    #[test]
    fn population_variance() {
        let t = T::from_vec(&[4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((t.var() - 0.1875).abs() < 1e-15);
    }
}
