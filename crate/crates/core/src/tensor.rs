//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};
use crate::scalar::Real;

/// Rank-k array stored flat in row-major order.
///
/// Construction rejects an empty shape, a payload whose length disagrees with
/// the shape, and non-finite elements. Dimensions of size zero are allowed in
/// memory but cannot be serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(GttaError::Shape("tensor shape must have at least one dimension".into()));
        }
        let expected = checked_len(&shape)
            .ok_or_else(|| GttaError::Shape(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(GttaError::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GttaError::Data(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_len(&shape).ok_or_else(|| GttaError::Shape(format!("shape {shape:?} overflows")))?;
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Stacks equal-length rows into a `[rows, len]` matrix.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(GttaError::Shape("cannot stack zero rows".into()));
        };
        let width = first.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(GttaError::Shape(format!("row {i} has length {}, expected {width}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), width], data)
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(GttaError::Shape("cannot stack zero tensors".into()));
        };
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape() != first.shape() {
                return Err(GttaError::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape(),
                    first.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading axis.
    pub fn nrows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        let w = self.row_len().max(1);
        self.data.chunks(w)
    }

    /// Shape of one slice along the leading axis (`[1]` for a vector).
    pub fn row_shape(&self) -> Vec<usize> {
        if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        }
    }

    /// Returns the `i`-th leading slice as its own tensor.
    pub fn slice_row(&self, i: usize) -> Tensor<T> {
        Tensor {
            shape: self.row_shape(),
            data: self.row(i).to_vec(),
        }
    }

    /// Gathers leading slices by index.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.row_len());
        for &i in indices {
            if i >= self.nrows() {
                return Err(GttaError::Shape(format!("row index {i} out of range {}", self.nrows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

fn checked_len(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}
