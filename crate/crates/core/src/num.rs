//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the samplers are generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    /// Conversion from a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` when all
/// entries are `-inf` (or the slice is empty).
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |acc, x| if x > acc { x } else { acc });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_offsets() {
        let xs = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
        let ys = [-1000.0_f64, -1000.0];
        assert!((log_sum_exp(&ys) - (-1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_all_negative_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp::<f32>(&[]), f32::NEG_INFINITY);
    }
}
