//! Dense n-dimensional `f32` array, row-major.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape {shape:?} requires {expected} values, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("cannot reshape {from:?} (len {len}) into {to:?}")]
    BadReshape {
        from: Vec<usize>,
        to: Vec<usize>,
        len: usize,
    },
}

/// Row-major dense array. Invariants: `product(shape) == values.len()` and all
/// values finite after any public operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: values.len(),
            });
        }
        let t = Tensor { shape, values };
        t.ensure_finite()?;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.values.len() {
            return Err(TensorError::BadReshape {
                from: self.shape,
                to: shape,
                len: self.values.len(),
            });
        }
        Ok(Tensor {
            shape,
            values: self.values,
        })
    }

    pub fn ensure_finite(&self) -> Result<(), TensorError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape() {
        let err = Tensor::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { expected: 6, .. }));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let err = Tensor::from_vec(vec![2], vec![1.0, f32::NAN]).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { index: 1 });
    }

    #[test]
    fn reshape_preserves_values() {
        let t = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.clone().reshape(vec![6]).unwrap();
        assert_eq!(r.values(), t.values());
        assert!(t.clone().reshape(vec![4]).is_err());
    }
}
