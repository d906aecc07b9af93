//! Dense N-dimensional tensors.
//!
//! Values are stored contiguously in row-major order as `f64`; double
//! precision keeps finite-difference gradient checks meaningful. A tensor
//! optionally carries a same-shape gradient buffer into which backward passes
//! accumulate (`+=`, never overwrite).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense tensor participating in reverse-mode autodiff.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(alloc::format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], requires_grad: false, grad: None }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], requires_grad: false, grad: None }
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value], requires_grad: false, grad: None }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interprets the shape as `[N, C, H, W]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::Shape(alloc::format!("expected 4-d tensor, got {:?}", other))),
        }
    }

    /// Interprets the shape as `[rows, cols]`.
    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            &[r, c] => Ok([r, c]),
            other => Err(Error::Shape(alloc::format!("expected 2-d tensor, got {:?}", other))),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    /// Gradient buffer, if any backward pass has touched this tensor.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Accumulates `delta` into the gradient buffer (allocated on first use).
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Clears the gradient buffer.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Elementwise sign with the fixed convention `sign(0) = +1`.
    pub fn sign(&self) -> Tensor {
        let data = self.data.iter().map(|&v| sign_val(v)).collect();
        Tensor { shape: self.shape.clone(), data, requires_grad: false, grad: None }
    }

    /// Human-readable shape, e.g. `2x3x4`.
    pub fn shape_string(&self) -> String {
        if self.shape.is_empty() {
            return String::from("scalar");
        }
        let mut s = String::new();
        for (i, d) in self.shape.iter().enumerate() {
            if i > 0 {
                s.push('x');
            }
            s.push_str(&alloc::format!("{}", d));
        }
        s
    }
}

/// Scalar sign with `sign(0) = +1`.
#[inline]
pub fn sign_val(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn grad_accumulates_instead_of_overwriting() {
        let mut t = Tensor::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let t = Tensor::new(vec![3], vec![-0.5, 0.0, 2.0]).unwrap();
        assert_eq!(t.sign().data(), &[-1.0, 1.0, 1.0]);
    }
}
