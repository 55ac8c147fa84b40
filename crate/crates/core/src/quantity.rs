//! Scalar abstraction shared by resource vectors and the fair-share allocator.
//!
//! The simulator and scheduler run on unsigned integers so every comparison is
//! exact. Signed integers carry adjustment deltas, `f64` carries utilization
//! ratios, and `Ratio<u128>` is the exact rational used to cross-check integer
//! allocations.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedSub, Num};

/// A quantity that can live in one dimension of a [`crate::ResourceVec`].
pub trait Quantity: Copy + PartialOrd + Debug + Num {
    /// `None` when the sum is not representable.
    fn checked_plus(self, rhs: Self) -> Option<Self>;

    /// `None` when the difference is not representable.
    fn checked_minus(self, rhs: Self) -> Option<Self>;

    /// Splits `self` into `parts` equal shares.
    ///
    /// Returns `(share, remainder)` with `share * parts + remainder == self`.
    /// Types with exact division always return a zero remainder.
    fn split_even(self, parts: usize) -> (Self, Self);

    fn from_count(n: usize) -> Self;
}

macro_rules! impl_integer_quantity {
    ($($t:ty),*) => {$(
        impl Quantity for $t {
            fn checked_plus(self, rhs: Self) -> Option<Self> {
                CheckedAdd::checked_add(&self, &rhs)
            }

            fn checked_minus(self, rhs: Self) -> Option<Self> {
                CheckedSub::checked_sub(&self, &rhs)
            }

            fn split_even(self, parts: usize) -> (Self, Self) {
                let n = parts as $t;
                (self / n, self % n)
            }

            fn from_count(n: usize) -> Self {
                n as $t
            }
        }
    )*};
}

impl_integer_quantity!(u32, u64, u128, i64, i128);

impl Quantity for f64 {
    fn checked_plus(self, rhs: Self) -> Option<Self> {
        let s = self + rhs;
        s.is_finite().then_some(s)
    }

    fn checked_minus(self, rhs: Self) -> Option<Self> {
        let s = self - rhs;
        s.is_finite().then_some(s)
    }

    fn split_even(self, parts: usize) -> (Self, Self) {
        (self / parts as f64, 0.0)
    }

    fn from_count(n: usize) -> Self {
        n as f64
    }
}

impl Quantity for Ratio<u128> {
    fn checked_plus(self, rhs: Self) -> Option<Self> {
        CheckedAdd::checked_add(&self, &rhs)
    }

    fn checked_minus(self, rhs: Self) -> Option<Self> {
        CheckedSub::checked_sub(&self, &rhs)
    }

    fn split_even(self, parts: usize) -> (Self, Self) {
        (
            self / Ratio::from_integer(parts as u128),
            Ratio::from_integer(0),
        )
    }

    fn from_count(n: usize) -> Self {
        Ratio::from_integer(n as u128)
    }
}
