//! Floating-point scalar abstraction.
//!
//! Logit vectors, the n-gram model output and the recurrent type predictor are
//! generic over the scalar so the same code runs in `f32` (the default, and
//! what the wire protocol carries) or `f64` (useful when cross-checking).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Cast any primitive into `S`. Only used for small constants.
#[inline]
pub fn lit<S: Scalar>(v: f64) -> S {
    S::from_f64_lossy(v)
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(scores: &[S]) -> Vec<S> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        let n = S::from_usize(scores.len().max(1)).unwrap_or_else(S::one);
        return vec![S::one() / n; scores.len()];
    }
    let mut out: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: S = out.iter().copied().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the largest finite-or-infinite entry; ties go to the lowest index.
/// NaN entries are never selected.
pub fn argmax<S: Scalar>(scores: &[S]) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
