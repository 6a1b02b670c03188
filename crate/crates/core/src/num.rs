//! Scalar abstraction for the learning kernels.
//!
//! Value tables, the dense Q approximator, the softmax helpers and the
//! trajectory classifier are written against [`Scalar`] so they run in
//! either `f32` or `f64`. The protocol layer (`stego`, `adversary`) is
//! pinned to `f64` through the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable by the learning kernels: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; the reward spec and feature scaling are
    /// expressed in `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Index of the largest element, first index wins on ties.
///
/// NaN entries never win.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `logits / temperature`.
///
/// The maximum is subtracted before exponentiation so that adding a
/// constant to every logit leaves the result unchanged.
pub fn softmax_with_temperature<S: Scalar>(logits: &[S], temperature: S) -> Vec<S> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits[argmax(logits)];
    let mut out: Vec<S> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: S = out.iter().copied().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    softmax_with_temperature(logits, S::one())
}
