use serde::{Deserialize, Serialize};

use super::NnError;

/// Dense row-major f64 array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NnError::ZeroDim(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::ShapeData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "zero-sized tensor"
        );
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NnError> {
        Self::new(shape, self.data)
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize), NnError> {
        match self.shape[..] {
            [n, l, c] => Ok((n, l, c)),
            _ => Err(NnError::Shape(format!(
                "expected [N, L, C], got {:?}",
                self.shape
            ))),
        }
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize), NnError> {
        match self.shape[..] {
            [n, d] => Ok((n, d)),
            _ => Err(NnError::Shape(format!(
                "expected [N, D], got {:?}",
                self.shape
            ))),
        }
    }
}
