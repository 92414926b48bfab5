//! Storage scalar abstraction.
//!
//! Weights, activations and coefficients may be stored as `f32` or `f64`.
//! Every reduction (dot products, loss sums, projector contractions) runs in
//! `f64` regardless of the storage type, so certificates computed from an
//! `f32` run are reproducible.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point storage type used by tensors and coefficient vectors.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Default + Debug + Display + Send + Sync + 'static
{
    /// Name recorded in checkpoint headers.
    const DTYPE: &'static str;
    /// Bytes per value in binary coefficient blocks.
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn write_be(self, out: &mut Vec<u8>);
    fn read_be(bytes: &[u8]) -> Self;
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
    fn write_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
    fn read_be(bytes: &[u8]) -> Self {
        f64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
    fn read_be(bytes: &[u8]) -> Self {
        f32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

/// Dot product accumulated in `f64` with four independent lanes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0].f64() * y[0].f64();
        acc[1] += x[1].f64() * y[1].f64();
        acc[2] += x[2].f64() * y[2].f64();
        acc[3] += x[3].f64() * y[3].f64();
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.f64() * y.f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `acc += alpha * x` with an `f64` accumulator.
#[inline]
pub fn axpy_acc<T: Scalar>(acc: &mut [f64], alpha: f64, x: &[T]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v.f64();
    }
}

pub fn to_f64_vec<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.f64()).collect()
}

pub fn from_f64_vec<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x)).collect()
}
