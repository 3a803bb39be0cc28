//! Dense row-major buffers with a shape, generic over the working precision.
//!
//! Everything numeric in the crate (images, fields, trajectory states,
//! parameters) is a [`TensorBuf`]. Training and sampling run in `f32`; the
//! `f64` instantiation exists for gradient checks and high-precision oracles.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point element type usable by the autograd engine.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Precision name recorded in reports and manifests.
    const NAME: &'static str;

    /// `c = a·b (+ c if accumulate)` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
    /// Transposed flags read the operand as stored in the transposed layout.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical rows×cols; stored either as rows×cols or cols×rows
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert_eq!(a.len(), m * k, "gemm lhs length");
                assert_eq!(b.len(), k * n, "gemm rhs length");
                assert_eq!(c.len(), m * n, "gemm output length");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c.iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, a_trans);
                let (rsb, csb) = gemm_strides(k, n, b_trans);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: lengths are checked above and the strides describe
                // in-bounds row-major (or transposed) layouts of those slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Dense multi-dimensional array.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBuf<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Debug> Debug for TensorBuf<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("TensorBuf")
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

impl<F: Scalar> TensorBuf<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> F) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
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

    /// Leading dimension, the batch size for batched tensors.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-dimension item.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn item(&self, i: usize) -> &[F] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [F] {
        let n = self.item_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(&shape, &self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn ensure_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, &self.shape));
        }
        Ok(())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        other.ensure_shape(&self.shape)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: F, other: &Self) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum_f64() / self.data.len() as f64
    }

    pub fn norm_f64(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn min_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_f64(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn cast<G: Scalar>(&self) -> TensorBuf<G> {
        TensorBuf {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }

    /// Concatenates tensors along the leading dimension.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::shape(&first.shape, &p.shape));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Self { shape, data })
    }

    /// Rows `[start, end)` of the leading dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let n = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self {
            shape,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Gathers items of the leading dimension by index.
    pub fn gather_batch(&self, idx: &[usize]) -> Self {
        let n = self.item_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self { shape, data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Euclidean distance between two equal-length slices, accumulated in `f64`.
pub fn dist_f64<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
