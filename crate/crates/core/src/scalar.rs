//! Floating-point scalar abstraction shared by the tensor engine and the models.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the tape: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or hyperparameter.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Correctly rounded sum of `values` (Shewchuk partials with a final
/// half-way correction).
///
/// The result depends only on the multiset of inputs, never on their order,
/// and scaling every input by a power of two scales the result exactly.
/// Set pooling relies on both properties.
pub fn exact_sum<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    let mut partials: Vec<S> = Vec::new();
    let mut special = S::zero();
    let mut has_special = false;
    for v in values {
        if !v.is_finite() {
            special = special + v;
            has_special = true;
            continue;
        }
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != S::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if has_special {
        return special;
    }

    let mut n = partials.len();
    if n == 0 {
        return S::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = S::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != S::zero() {
            break;
        }
    }
    if n > 0
        && ((lo < S::zero() && partials[n - 1] < S::zero())
            || (lo > S::zero() && partials[n - 1] > S::zero()))
    {
        let y = lo + lo;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_cancels_catastrophically() {
        let v = [1e100, 1.0, -1e100, 1e-100];
        assert_eq!(exact_sum(v), 1.0 + 1e-100);
        assert_eq!(exact_sum([0.1f64; 10]), 1.0);
    }

    #[test]
    fn exact_sum_handles_empty_and_specials() {
        assert_eq!(exact_sum::<f64>([]), 0.0);
        assert!(exact_sum([1.0, f64::NAN]).is_nan());
        assert_eq!(exact_sum([1.0, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let a = [0.3f64, 1e16, -7.25, 1e-9, -1e16, 2.0 / 3.0];
        let mut b = a;
        b.reverse();
        b.swap(1, 4);
        assert_eq!(exact_sum(a).to_bits(), exact_sum(b).to_bits());
    }

    #[test]
    fn exact_sum_f32() {
        let v = [1e8f32, 1.0, -1e8];
        assert_eq!(exact_sum(v), 1.0);
    }
}
