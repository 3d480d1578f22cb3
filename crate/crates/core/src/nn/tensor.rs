use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major buffer with up to three axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape("tensor", format!("{shape:?}"), data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    /// Single-row batch `[1, n]`.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("{shape:?}"), format!("{:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch entry.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0].max(1)
    }

    pub fn row_slice(&self, b: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Concatenates two `[B, *]` tensors along the feature axis.
    pub fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.batch() != b.batch() {
            return Err(Error::shape("concat batch", a.batch(), b.batch()));
        }
        let (na, nb) = (a.row_len(), b.row_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for r in 0..a.batch() {
            data.extend_from_slice(a.row_slice(r));
            data.extend_from_slice(b.row_slice(r));
        }
        Tensor::new(&[a.batch(), na + nb], data)
    }

    /// Splits a `[B, n]` tensor into `[B, at]` and `[B, n - at]`.
    pub fn split_features(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let n = self.row_len();
        if at > n {
            return Err(Error::shape("split_features", format!("<= {n}"), at));
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in 0..self.batch() {
            let row = self.row_slice(r);
            a.extend_from_slice(&row[..at]);
            b.extend_from_slice(&row[at..]);
        }
        Ok((
            Tensor::new(&[self.batch(), at], a)?,
            Tensor::new(&[self.batch(), n - at], b)?,
        ))
    }
}
