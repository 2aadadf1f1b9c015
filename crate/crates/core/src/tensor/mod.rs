//! Dense rank-4 tensors in `(sample, channel, row, col)` layout.
//!
//! [`Tensor`] is a plain value: shape plus contiguous row-major storage.
//! Differentiation lives in [`crate::autograd`], which records operations
//! over tensors on a tape.

mod conv;
mod io;
mod real;
mod resample;

use std::fmt;

pub use conv::{conv2d, conv2d_backward, conv2d_transposed, conv2d_transposed_backward, ConvGeometry, ConvGrads};
pub use io::{read_flt1, read_flt1_file, write_flt1, write_flt1_file, DType, FLT1_MAGIC};
pub use real::Real;
pub use resample::{
    avg_downsample2, avg_downsample2_backward, bilinear_upsample, bilinear_upsample_backward, depth_to_space,
    space_to_depth, HaarBand,
};

use crate::error::{Error, Result};

/// Tensor dimensions: samples, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_scalar(&self) -> bool {
        self.n == 1 && self.c == 1 && self.h == 1 && self.w == 1
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim(
                "Tensor::from_vec",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` in storage order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// The `(h, w)` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.c * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::ZERO, |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel())
    }

    /// Euclidean inner product, accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::INFINITY, T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::NEG_INFINITY, T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    /// Channels `[from, to)` of every sample.
    pub fn channel_slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.shape.c {
            return Err(Error::Index {
                op: "channel_slice",
                detail: format!("range [{from}, {to}) invalid for {} channels", self.shape.c),
            });
        }
        let s = self.shape;
        let out_shape = Shape::new(s.n, to - from, s.h, s.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            for c in from..to {
                data.extend_from_slice(self.plane(n, c));
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn channel_concat(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.shape, other.shape);
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::dim("channel_concat", format!("cannot concatenate {a} with {b}")));
        }
        let out_shape = Shape::new(a.n, a.c + b.c, a.h, a.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..a.n {
            data.extend_from_slice(self.sample(n));
            data.extend_from_slice(other.sample(n));
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Stacks equally shaped tensors along the sample axis.
    pub fn stack_samples(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack_samples needs at least one tensor".into()))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::dim("stack_samples", format!("cannot stack {s} with {first}")));
            }
            data.extend_from_slice(&p.data);
        }
        let n = parts.iter().map(|p| p.shape.n).sum();
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }

    /// Spatial window `[y0, y0+h) x [x0, x0+w)` of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return Err(Error::geometry(
                "crop",
                format!("window {h}x{w} at ({y0}, {x0}) does not fit in {s}"),
            ));
        }
        let out_shape = Shape::new(s.n, s.c, h, w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = self.plane(n, c);
                for y in y0..y0 + h {
                    data.extend_from_slice(&plane[y * s.w + x0..y * s.w + x0 + w]);
                }
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("shapes {} and {} differ", self.shape, other.shape),
            ));
        }
        Ok(())
    }
}
