//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        xs.iter().fold(T::zero(), |acc, &x| acc + x)
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sum of a multiset, independent of the order the terms arrive in.
///
/// Terms are sorted by total order first, so any permutation of `xs`
/// produces bit-identical output.
pub fn multiset_sum<T: Scalar>(xs: &mut [T]) -> T {
    xs.sort_unstable_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
    pairwise_sum(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(1000.0f64) == 1.0);
        assert!(sigmoid(-1000.0f64) == 0.0);
        assert!((sigmoid(1.0f64) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn multiset_sum_ignores_order() {
        let mut a: Vec<f64> = vec![1e16, 1.0, -1e16, 3.5, 0.1, 7.25, -2.0, 1e-3, 4.0, 9.0];
        let mut b = a.clone();
        b.reverse();
        b.swap(1, 7);
        assert_eq!(multiset_sum(&mut a).to_bits(), multiset_sum(&mut b).to_bits());
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &x in &[-3.0f64, -0.2, 0.0, 1.7] {
            assert!((logit(sigmoid(x)) - x).abs() < 1e-12);
        }
    }
}
