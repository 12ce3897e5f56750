//! Dense row-major tensors and a reverse-mode autodiff tape.
//!
//! Parameters live in [`Tensor`]s owned by the model. A forward pass binds them
//! into a [`Tape`] as leaves (borrowed, not copied), records every operation,
//! and [`Tape::backward`] walks the records in reverse to populate leaf
//! gradients. Reductions accumulate in `f64`.

mod kernels;
mod rng;
mod tape;

pub use rng::DropoutRng;
pub use tape::{OpKind, Tape, Var};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Element type of tensors and tapes. Training runs in `f32`; gradient
/// checking re-runs the same graph in `f64`.
pub trait Real: Float + FromPrimitive + Sum + AddAssign + MulAssign + Default + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("float converts to f64")
}

pub fn from_f64<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to float")
}

/// A dense tensor with optional gradient storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); n]).expect("zeros: valid shape")
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("from_vec: non-empty data")
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(vec![value])
    }

    /// Elementwise conversion to another float type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| from_f64(to_f64(v))).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient has {} elements, tensor {}", g.len(), self.data.len()),
            ));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }
}

impl Tensor<f32> {
    /// Scaled-normal initialization (`N(0, std²)`).
    pub fn randn<R: Rng + ?Sized>(shape: Vec<usize>, std: f32, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0f32, std).expect("randn: finite std");
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor::new(shape, data).expect("randn: valid shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn accumulate_grad_adds() {
        let mut t = Tensor::zeros(vec![2]);
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad.as_deref(), Some(&[1.5, 2.5][..]));
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
