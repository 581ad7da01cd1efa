//! Dense rank-4 tensors in `(batch, channels, height, width)` layout.
//!
//! Data is row-major: the innermost stride is along width, then height,
//! then channel, then batch. All values are `f32`; gradient storage is
//! allocated lazily and always matches the data length.

use std::fmt;

use crate::error::{Error, Result};

/// Logical dimensions of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    /// Total number of elements.
    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Flat index of `(n, c, h, w)`.
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// A rank-4 array of `f32` with optional gradient storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Tensor {
        Tensor { shape, data: vec![value; shape.numel()], grad: None }
    }

    /// Wraps an existing buffer. Fails if the length does not match the shape.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Tensor> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot form a {} tensor ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Gradient buffer, if one has been accumulated.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocating zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Mutable data alongside the (read-only) gradient, for optimizers.
    pub fn data_and_grad(&mut self) -> (&mut [f32], Option<&[f32]>) {
        (&mut self.data, self.grad.as_deref())
    }

    /// Adds `delta` into the gradient buffer elementwise.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient of {} values does not match tensor {}",
                delta.len(),
                self.shape
            )));
        }
        let g = self.grad_mut();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Clears the gradient buffer (keeps it allocated if present).
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
