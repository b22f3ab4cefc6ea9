//! Dense 5-D tensors laid out as `N x C x D x H x W` (row-major).
//!
//! 2-D images use `D = 1`; scalars use the all-ones shape.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 5]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape([n, c, d, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn d(&self) -> usize {
        self.0[2]
    }
    pub fn h(&self) -> usize {
        self.0[3]
    }
    pub fn w(&self) -> usize {
        self.0[4]
    }

    /// Voxels per channel.
    pub fn spatial(&self) -> usize {
        self.0[2] * self.0[3] * self.0[4]
    }

    /// Elements per batch item.
    pub fn item(&self) -> usize {
        self.0[1] * self.spatial()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let [n, c, d, h, w] = self.0;
        write!(f, "[{n}, {c}, {d}, {h}, {w}]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor { shape, data: vec![v; shape.len()] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: Shape::SCALAR, data: vec![v] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.len() != data.len() {
            bail!(Shape, "buffer of {} elements does not fit shape {shape}", data.len());
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Same buffer, new shape of equal length.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            bail!(Shape, "cannot reshape {} into {shape}", self.shape);
        }
        self.shape = shape;
        Ok(self)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64c(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    /// Copy of batch items `start..start + len`.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Tensor<T> {
        let item = self.shape.item();
        let mut shape = self.shape;
        shape.0[0] = len;
        Tensor { shape, data: self.data[start * item..(start + len) * item].to_vec() }
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let Some(first) = items.first() else {
            bail!(Shape, "cannot stack an empty list");
        };
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        let mut n = 0;
        for t in items {
            let mut a = t.shape;
            let mut b = first.shape;
            a.0[0] = 1;
            b.0[0] = 1;
            if a != b {
                bail!(Shape, "cannot stack {} with {}", t.shape, first.shape);
            }
            n += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape;
        shape.0[0] = n;
        Ok(Tensor { shape, data })
    }
}
