//! Rank-4 NCHW tensors.
//!
//! Storage is a dense row-major buffer; there are no strided views. Values
//! coming from outside (constructors taking caller data, blob decoding) are
//! checked for finiteness. The only in-place mutation entry points are
//! [`Tensor::data_mut`] and the `*_assign` helpers used by optimizers.

mod blob;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use blob::{read_blob, read_blob_prefix, write_blob, write_blob_into, BlobError, BLOB_MAGIC, BLOB_VERSION};


use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let bad = |reason| Error::InvalidShape { n, c, h, w, reason };
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(bad("all dimensions must be at least 1"));
        }
        let count = (n as u64)
            .checked_mul(c as u64)
            .and_then(|v| v.checked_mul(h as u64))
            .and_then(|v| v.checked_mul(w as u64))
            .ok_or_else(|| bad("element count overflows u64"))?;
        if usize::try_from(count).is_err() {
            return Err(bad("element count exceeds addressable memory"));
        }
        Ok(Shape { n, c, h, w })
    }

    /// Shape `(c, 1, 1, 1)`, used for per-channel vectors (bias, BN).
    pub fn vector(c: usize) -> Result<Self> {
        Shape::new(c, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Real = f32> {
    shape: Shape,
    data: Vec<E>,
}

impl<E: Real> Tensor<E> {
    /// Builds a tensor from caller data, rejecting NaN and infinities.
    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::LengthMismatch {
                expected: shape.numel(),
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for results of ops on already-valid tensors.
    pub(crate) fn from_raw(shape: Shape, data: Vec<E>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: Shape, value: E) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, E::one())
    }

    /// Uniform samples in `±sqrt(6 / fan_in)`.
    pub fn kaiming_uniform(shape: Shape, fan_in: usize, rng: &mut Rng) -> Result<Self> {
        if fan_in == 0 {
            return Err(Error::arg("kaiming_init: fan_in must be at least 1"));
        }
        let bound = libm::sqrt(6.0 / fan_in as f64);
        let data = (0..shape.numel())
            .map(|_| E::of(rng.range(-bound, bound)))
            .collect();
        Ok(Tensor { shape, data })
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn(shape: Shape, std: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| E::of(std * rng.normal())).collect();
        Tensor { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| E::of(rng.range(lo, hi))).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the buffer. Shape is fixed.
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.index(n, c, h, w)]
    }

    /// The `h·w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[E] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// Same buffer reinterpreted under a shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::LengthMismatch {
                expected: shape.numel(),
                got: self.data.len(),
            });
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn cast<F: Real>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| F::of(v.as_f64())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn expect_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: self.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: E) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// In-place `self += alpha * other`.
    pub fn axpy_assign(&mut self, alpha: E, other: &Self) -> Result<()> {
        self.expect_shape(other.shape)?;
        crate::real::axpy(&mut self.data, alpha, &other.data);
        Ok(())
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    /// Sum in `f64`, independent of the element type.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs(&self) -> E {
        self.data.iter().fold(E::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of buffers (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Samples `[start, start + len)` along the batch axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape.n {
            return Err(Error::arg("slice_batch: range out of bounds"));
        }
        let per = self.shape.c * self.shape.plane();
        Ok(Tensor {
            shape: self.shape.with_n(len),
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    /// Gathers the listed samples into a new batch.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::arg("gather_batch: no indices"));
        }
        let per = self.shape.c * self.shape.plane();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::arg("gather_batch: index out of range"));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Ok(Tensor {
            shape: self.shape.with_n(indices.len()),
            data,
        })
    }

    /// Concatenates tensors along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_batch: no parts"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            p.expect_shape(first.shape.with_n(p.shape.n))?;
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: first.shape.with_n(n),
            data,
        })
    }
}

/// Elementwise sum. Shapes must match.
pub fn ew_add<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.add(b)
}

/// Elementwise product. Shapes must match.
pub fn ew_mul<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.mul(b)
}

/// Concatenates along the channel axis. `n`, `h`, `w` must agree.
pub fn concat_channels<E: Real>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::arg("concat_channels: no parts"))?;
    let base = first.shape;
    let mut c_total = 0;
    for p in parts {
        let s = p.shape;
        if s.n != base.n || s.h != base.h || s.w != base.w {
            return Err(Error::ShapeMismatch {
                expected: base.with_c(s.c),
                got: s,
            });
        }
        c_total += s.c;
    }
    let out_shape = base.with_c(c_total);
    let plane = base.plane();
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..base.n {
        for p in parts {
            let per = p.shape.c * plane;
            data.extend_from_slice(&p.data[n * per..(n + 1) * per]);
        }
    }
    Ok(Tensor::from_raw(out_shape, data))
}

/// Splits along the channel axis into consecutive groups of `sizes`.
pub fn split_channels<E: Real>(x: &Tensor<E>, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
    let s = x.shape;
    if sizes.is_empty() || sizes.iter().any(|&c| c == 0) || sizes.iter().sum::<usize>() != s.c {
        return Err(Error::arg("split_channels: sizes must be positive and sum to c"));
    }
    let plane = s.plane();
    let mut out: Vec<Vec<E>> = sizes
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * plane))
        .collect();
    for n in 0..s.n {
        let mut offset = (n * s.c) * plane;
        for (buf, &c) in out.iter_mut().zip(sizes) {
            buf.extend_from_slice(&x.data[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    Ok(out
        .into_iter()
        .zip(sizes)
        .map(|(data, &c)| Tensor::from_raw(s.with_c(c), data))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn zeros_examples() {
        assert_eq!(Tensor::<f32>::zeros(sh(1, 1, 2, 2)).data(), &[0.0; 4]);
        let t = Tensor::<f32>::zeros(sh(2, 3, 4, 4));
        assert_eq!(t.numel(), 96);
        assert!(t.data().iter().all(|v| *v == 0.0));
        assert_eq!(Tensor::<f32>::zeros(sh(1, 1, 1, 1)).data(), &[0.0]);
    }

    #[test]
    fn shape_rejects_zero_and_overflow() {
        assert!(Shape::new(0, 1, 1, 1).is_err());
        assert!(Shape::new(1, 1, 0, 1).is_err());
        let big = 1usize << 20;
        assert!(Shape::new(big, big, big, big).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite_and_bad_len() {
        let s = sh(1, 1, 1, 2);
        assert_eq!(
            Tensor::from_vec(s, alloc::vec![1.0f32, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(Tensor::from_vec(s, alloc::vec![f32::INFINITY, 0.0]).is_err());
        assert!(Tensor::from_vec(s, alloc::vec![1.0f32]).is_err());
    }

    #[test]
    fn kaiming_bounds_and_determinism() {
        let s = sh(4, 6, 3, 3);
        let a = Tensor::<f32>::kaiming_uniform(s, 6, &mut Rng::new(3)).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        let b = Tensor::<f32>::kaiming_uniform(s, 6, &mut Rng::new(3)).unwrap();
        assert!(a.bit_eq(&b));
        assert!(Tensor::<f32>::kaiming_uniform(s, 0, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn kaiming_fan_in_24_bound_by_sampling() {
        // sqrt(6/24) = 0.5
        let t = Tensor::<f64>::kaiming_uniform(sh(1, 1, 100, 100), 24, &mut Rng::new(11)).unwrap();
        let max = t.max_abs();
        assert!(max <= 0.5, "max {max}");
        assert!(max > 0.49, "samples should approach the bound, max {max}");
    }

    #[test]
    fn elementwise_examples() {
        let s = sh(1, 1, 1, 2);
        let a = Tensor::from_vec(s, alloc::vec![2.0f32, 3.0]).unwrap();
        let b = Tensor::from_vec(s, alloc::vec![4.0f32, 5.0]).unwrap();
        assert_eq!(ew_mul(&a, &b).unwrap().data(), &[8.0, 15.0]);
        assert_eq!(ew_mul(&a, &Tensor::ones(s)).unwrap(), a);
        assert_eq!(ew_add(&a, &Tensor::zeros(s)).unwrap(), a);
        assert!(ew_add(&a, &Tensor::zeros(sh(1, 1, 2, 1))).is_err());
    }

    #[test]
    fn concat_split_examples() {
        let a = Tensor::<f32>::uniform(sh(1, 2, 2, 2), -1.0, 1.0, &mut Rng::new(1));
        let b = Tensor::<f32>::uniform(sh(1, 3, 2, 2), -1.0, 1.0, &mut Rng::new(2));
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape(), sh(1, 5, 2, 2));
        let parts = split_channels(&ab, &[2, 3]).unwrap();
        assert_eq!(parts, alloc::vec![a.clone(), b]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        assert!(split_channels(&ab, &[2, 2]).is_err());
        assert!(concat_channels(&[&a, &Tensor::zeros(sh(1, 1, 3, 2))]).is_err());
    }

    #[test]
    fn batch_helpers() {
        let t = Tensor::<f32>::uniform(sh(4, 2, 3, 3), 0.0, 1.0, &mut Rng::new(4));
        let a = t.slice_batch(0, 2).unwrap();
        let b = t.slice_batch(2, 2).unwrap();
        assert_eq!(Tensor::concat_batch(&[&a, &b]).unwrap(), t);
        let g = t.gather_batch(&[3, 0]).unwrap();
        assert_eq!(g.plane(0, 1), t.plane(3, 1));
    }
}
