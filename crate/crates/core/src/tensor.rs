//! Dense 4-D tensors in `(n, c, h, w)` layout and named parameters.
//!
//! All model math runs in `f32`; the gradient checker re-evaluates graphs in
//! `f64`, so the storage type is generic with `Tensor = TensorData<f32>` as
//! the public alias.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type the compute kernels are written against.
pub trait Real:
    Copy
    + PartialOrd
    + fmt::Debug
    + Default
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Tensor extents: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a batch of feature vectors: `(n, d, 1, 1)`.
    pub const fn vector(n: usize, d: usize) -> Self {
        Shape::new(n, d, 1, 1)
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the spatial extent is collapsed, i.e. the tensor is a batch
    /// of `c`-dimensional vectors.
    pub fn is_vector(&self) -> bool {
        self.h == 1 && self.w == 1
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Flat row-major `(n, c, h, w)` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorData<T> {
    shape: Shape,
    data: Vec<T>,
}

/// The tensor type used by the model stack.
pub type Tensor = TensorData<f32>;

impl<T: Real> TensorData<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                context: "tensor",
                shape,
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        TensorData {
            shape,
            data: vec![T::ZERO; shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        TensorData {
            shape,
            data: vec![value; shape.len()],
        }
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset {
            context: "stack of zero tensors",
        })?;
        let Shape { c, h, w, .. } = first.shape;
        let mut n = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (c, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape,
                    rhs: p.shape,
                });
            }
            n += p.shape.n;
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(TensorData {
            shape: Shape::new(n, c, h, w),
            data,
        })
    }

    /// Extracts batch row `i` as a `(1, c, h, w)` tensor.
    pub fn batch_row(&self, i: usize) -> Self {
        let per = self.shape.c * self.shape.h * self.shape.w;
        TensorData {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }
}

impl Tensor {
    /// Exact widening of every element to `f64`.
    pub fn promote(&self) -> TensorData<f64> {
        TensorData {
            shape: self.shape,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Little-endian byte image of the payload, as stored in weights files.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() * 4 {
            return Err(Error::DataLength {
                context: "tensor payload bytes",
                shape,
                expected: shape.len() * 4,
                got: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Tensor { shape, data })
    }
}

/// A named model weight. Non-trainable parameters accumulate no gradient and
/// are never touched by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Parameter {
            name: name.into(),
            value,
            trainable,
        }
    }
}
