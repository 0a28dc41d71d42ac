//! Error-free floating-point accumulation.
//!
//! [`ExactSum`] keeps a running sum as a list of non-overlapping `f64`
//! partials (Shewchuk's algorithm, as used by Python's `math.fsum`), so the
//! represented value is the exact real sum of everything added. [`ExactSum::value`]
//! rounds that real number to the nearest `f64` (ties to even).
//!
//! Because rounding only happens once, at read-out, any regrouping of the same
//! terms produces the same `f64`: unrolling `k1` then `k2` steps yields the same
//! loss as unrolling `k1 + k2`, and per-unroll gradient estimates summed over a
//! problem equal the one-shot estimate bit for bit.

use std::ops::{Add, AddAssign};

/// Exact sum of `f64` terms.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    // Sum of non-finite inputs (inf/nan); poisons the result.
    special: f64,
    overflow: bool,
}

/// `a * b = hi + lo` exactly (barring overflow/underflow).
#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let hi = a * b;
    let lo = a.mul_add(b, -hi);
    (hi, lo)
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_value(x: f64) -> Self {
        let mut s = Self::new();
        s.push(x);
        s
    }

    pub fn push(&mut self, x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut x = x;
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            if hi.is_infinite() {
                self.overflow = true;
                return;
            }
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Adds `a * b` without rounding the product.
    pub fn add_product(&mut self, a: f64, b: f64) {
        if !(a.is_finite() && b.is_finite()) {
            self.special += a * b;
            return;
        }
        let (hi, lo) = two_product(a, b);
        self.push(hi);
        if lo != 0.0 {
            self.push(lo);
        }
    }

    /// Adds `other * c` exactly.
    pub fn add_scaled(&mut self, other: &ExactSum, c: f64) {
        for &p in &other.partials {
            self.add_product(p, c);
        }
        if other.special != 0.0 || other.special.is_nan() {
            self.special += other.special * c;
        }
        self.overflow |= other.overflow;
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.push(p);
        }
        self.special += other.special;
        self.overflow |= other.overflow;
    }

    /// Returns `self * c` exactly.
    pub fn scaled(&self, c: f64) -> ExactSum {
        let mut out = ExactSum::new();
        out.add_scaled(self, c);
        out
    }

    pub fn is_finite(&self) -> bool {
        !self.overflow && self.special == 0.0
    }

    /// The exact sum rounded to the nearest `f64`.
    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        if self.overflow {
            return f64::NAN;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round half to even when the remaining partials push past a tie.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl AddAssign<f64> for ExactSum {
    fn add_assign(&mut self, rhs: f64) {
        self.push(rhs);
    }
}

impl AddAssign<&ExactSum> for ExactSum {
    fn add_assign(&mut self, rhs: &ExactSum) {
        self.merge(rhs);
    }
}

impl Add for ExactSum {
    type Output = ExactSum;
    fn add(mut self, rhs: ExactSum) -> ExactSum {
        self.merge(&rhs);
        self
    }
}

impl<'a> Add<&'a ExactSum> for &'a ExactSum {
    type Output = ExactSum;
    fn add(self, rhs: &ExactSum) -> ExactSum {
        let mut out = self.clone();
        out.merge(rhs);
        out
    }
}

impl std::iter::Sum<f64> for ExactSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Correctly rounded sum of a slice.
pub fn exact_sum(xs: &[f64]) -> f64 {
    xs.iter().copied().sum::<ExactSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SCALE: f64 = 1.0 / (1u64 << 40) as f64;

    // Oracle: terms k * 2^-40 with integer k sum exactly in i128; `as f64`
    // rounds to nearest-even and the power-of-two rescale is exact.
    fn fixed_point_oracle(ks: &[i64]) -> f64 {
        let total: i128 = ks.iter().map(|&k| k as i128).sum();
        total as f64 * SCALE
    }

    #[test]
    fn classic_cancellation() {
        let xs = [1e100, 1.0, -1e100, 1e-100];
        assert_eq!(exact_sum(&xs), 1.0);
        let naive: f64 = xs.iter().sum();
        assert_ne!(naive, 1.0);
    }

    #[test]
    fn half_even_tie() {
        // 1 + 2^-53 + 2^-106 is just above the tie, must round up.
        let xs = [1.0, 2f64.powi(-53), 2f64.powi(-106)];
        assert_eq!(exact_sum(&xs), 1.0 + 2f64.powi(-52));
        // 1 + 2^-53 is an exact tie, rounds to even (1.0).
        assert_eq!(exact_sum(&[1.0, 2f64.powi(-53)]), 1.0);
    }

    #[test]
    fn non_finite_poisons() {
        let mut s = ExactSum::new();
        s.push(1.0);
        s.push(f64::INFINITY);
        assert!(!s.is_finite());
        assert_eq!(s.value(), f64::INFINITY);
        s.push(f64::NEG_INFINITY);
        assert!(s.value().is_nan());
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(ExactSum::new().value(), 0.0);
    }

    proptest! {
        #[test]
        fn matches_fixed_point_oracle(ks in prop::collection::vec(-(1i64 << 62)..(1i64 << 62), 0..40)) {
            let xs: Vec<f64> = ks.iter().map(|&k| k as f64 * SCALE).collect();
            // k as f64 may round; rebuild the oracle from the representable values.
            let ks_exact: Vec<i64> = xs.iter().map(|&x| (x / SCALE) as i64).collect();
            prop_assert_eq!(exact_sum(&xs), fixed_point_oracle(&ks_exact));
        }

        #[test]
        fn grouping_invariant(xs in prop::collection::vec(-1e6f64..1e6, 1..30), cut in 0usize..30) {
            let cut = cut.min(xs.len());
            let whole = exact_sum(&xs);
            let left: ExactSum = xs[..cut].iter().copied().sum();
            let right: ExactSum = xs[cut..].iter().copied().sum();
            prop_assert_eq!((left + right).value(), whole);
            let mut rev = xs.clone();
            rev.reverse();
            prop_assert_eq!(exact_sum(&rev), whole);
        }

        #[test]
        fn scaling_distributes(xs in prop::collection::vec(-1e3f64..1e3, 1..20), c in -10.0f64..10.0, cut in 0usize..20) {
            let cut = cut.min(xs.len());
            let left: ExactSum = xs[..cut].iter().copied().sum();
            let right: ExactSum = xs[cut..].iter().copied().sum();
            let whole: ExactSum = xs.iter().copied().sum();
            let split = left.scaled(c) + right.scaled(c);
            prop_assert_eq!(split.value(), whole.scaled(c).value());
        }
    }
}
