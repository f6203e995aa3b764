use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major f64 array.
///
/// Parameters carry `requires_grad = true` and receive a `grad` buffer of the
/// same shape after a backward pass; data tensors leave both unset.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::domain("tensor", "dimension sizes must be positive"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// 1-D tensor; `data` must be non-empty.
    pub fn vector(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(&[rows, cols], data)
    }

    /// Marks the tensor as a trainable parameter.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension (batch size for a 2-D tensor).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Gathers the given rows of a 2-D tensor into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::domain("select_rows", "no rows selected"));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::domain("select_rows", "row index out of range"));
            }
            data.extend_from_slice(self.row(r));
        }
        Tensor::new(&[rows.len(), c], data)
    }

    /// Stacks two 2-D tensors with equal column counts.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.cols() {
            return Err(Error::shape("concat_rows", &self.shape, &other.shape));
        }
        let mut data = Vec::with_capacity(self.numel() + other.numel());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::new(&[self.rows() + other.rows(), self.cols()], data)
    }
}

/// One-hot encodes 1-based labels into a `batch × num_classes` matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::domain("one_hot", "empty label batch"));
    }
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > num_classes {
            return Err(Error::domain("one_hot", "label outside 1..=K"));
        }
        data[i * num_classes + (y - 1)] = 1.0;
    }
    Tensor::new(&[labels.len(), num_classes], data)
}

/// Index of the largest element; the first one wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
