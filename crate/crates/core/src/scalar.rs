//! Scalar abstraction for the exact-arithmetic parts of the model.
//!
//! The state transition, the cumulative lost-sales identity and the simple
//! order rules only need ring operations and an ordering, so they are written
//! against [`Scalar`]. This lets the same kernel run on `f64`, `f32` or exact
//! rationals (e.g. `num_rational::Ratio<i64>`), the latter being useful for
//! checking identities without rounding noise.

use std::fmt::Debug;

use num_traits::{Float, Num};

/// Ordered ring scalar: `f32`, `f64`, rationals.
pub trait Scalar: Num + PartialOrd + Copy + Debug {
    /// `max(self, 0)`.
    #[inline]
    fn pos(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    #[inline]
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn is_nonnegative(self) -> bool {
        self >= Self::zero()
    }
}

impl<T: Num + PartialOrd + Copy + Debug> Scalar for T {}

/// Floating-point scalar used by the closed-form objects.
pub trait Real: Scalar + Float {
    fn of(x: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}
