use std::cmp::Ordering;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of tensors: `f32` for training and
/// inference, `f64` where finite-difference checks need the headroom.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn total_order(&self, other: &Self) -> Ordering;

    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float to f64")
    }

    fn cast<T: Scalar>(self) -> T {
        T::lit(self.to_f64_lossless())
    }
}

impl Scalar for f32 {
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Scalar for f64 {
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

/// Sum whose result does not depend on the order of `values`: the terms are
/// added in ascending total order.
pub fn canonical_sum<S: Scalar>(values: &[S]) -> S {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(S::total_order);
    sorted.into_iter().fold(S::zero(), |acc, v| acc + v)
}
