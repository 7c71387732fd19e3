//! Dense row-major tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense n-dimensional array. `grad` is filled in by
/// [`Graph::backward`](crate::Graph::backward) for tensors that require it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_slice(shape: &[usize], data: &[F]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    /// Uniform initialisation in `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| F::of(rng.gen_range(-scale..scale)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Number of rows when viewed as a matrix over the last axis.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |a, &b| a + b)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| G::of(v.as_f64())).collect()),
        }
    }
}

/// Numerically stable softmax of a vector, or of each row of a matrix.
pub fn softmax<F: Scalar>(t: &Tensor<F>) -> Result<Tensor<F>> {
    if t.data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax input"));
    }
    if t.rank() > 2 {
        return Err(Error::Shape(format!(
            "softmax expects rank 1 or 2, got {:?}",
            t.shape
        )));
    }
    let mut out = Tensor::zeros(&t.shape);
    let c = t.cols();
    for r in 0..t.rows() {
        softmax_into(t.row(r), &mut out.data[r * c..(r + 1) * c]);
    }
    Ok(out)
}

pub(crate) fn softmax_into<F: Scalar>(x: &[F], out: &mut [F]) {
    let max = x.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut total = F::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}
