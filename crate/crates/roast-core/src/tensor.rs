//! Dense row-major tensors of `f64`.
//!
//! A [`Tensor`] is an immutable value: every constructor validates that the
//! data length matches the shape product and that all entries are finite.
//! Ops that could produce NaN/Inf re-validate their outputs, so a tensor in
//! circulation always holds finite values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> CoreResult<Self> {
        if shape.contains(&0) {
            return Err(CoreError::InvalidArgument {
                detail: alloc::format!("zero dimension in shape {shape:?}"),
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "tensor",
                detail: alloc::format!("shape {shape:?} needs {expect} values, got {}", data.len()),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor")?;
        Ok(t)
    }

    /// Rank-1 tensor from a vector.
    pub fn from_vec(data: Vec<f64>) -> CoreResult<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Rank-0 (scalar) tensor.
    pub fn scalar(value: f64) -> CoreResult<Self> {
        Tensor::new(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Construction for internal ops that validate separately.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> CoreResult<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite { op })
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a rank-0 tensor.
    pub fn item(&self) -> CoreResult<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(CoreError::ShapeMismatch {
                op: "item",
                detail: alloc::format!("expected scalar, got shape {:?}", self.shape),
            })
        }
    }

    /// Size of the trailing axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Max of |x| over all entries.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(libm::fabs(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            Tensor::from_vec(vec![1.0, f64::NAN]),
            Err(CoreError::NonFinite { op: "tensor" })
        );
        assert!(Tensor::from_vec(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let s = Tensor::scalar(4.5).unwrap();
        assert!(s.is_scalar());
        assert_eq!(s.item().unwrap(), 4.5);
        assert!(Tensor::from_vec(vec![1.0, 2.0]).unwrap().item().is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }
}
