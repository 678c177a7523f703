//! Dense row-major 64-bit float tensors.
//!
//! 64-bit storage is deliberate: it makes finite-difference gradient checks
//! meaningful at tolerances around 1e-6.

use crate::error::{Error, Result};

/// A dense tensor: a shape and a row-major `f64` buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating that the buffer length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    ///
    /// Panics on a degenerate shape; shapes are always produced by code, not
    /// by external input.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = checked_numel(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// One-dimensional tensor from a flat buffer.
    pub fn from_flat(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data: if data.is_empty() { vec![0.0] } else { data },
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Same buffer under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Checked multi-index read; convenient for test oracles, slow for hot loops.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {} out of bounds at axis {}", ix, i);
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack".to_string()))?;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for t in items {
            if t.shape() != first.shape() {
                return Err(Error::shape(
                    "stack",
                    format!("mixed shapes {:?} vs {:?}", first.shape(), t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        Tensor::new(shape, data)
    }

    /// Copy out item `i` along the leading axis.
    pub fn index_leading(&self, i: usize) -> Tensor {
        assert!(!self.shape.is_empty() && i < self.shape[0]);
        let item = self.numel() / self.shape[0];
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * item..(i + 1) * item].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(
            "tensor",
            format!("degenerate shape {:?}", shape),
        ));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::shape("tensor", format!("shape {:?} overflows", shape)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn new_rejects_zero_dims() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn at_reads_row_major() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    fn stack_concatenates_leading_axis() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.index_leading(1).data(), &[3.0, 4.0]);
    }
}
