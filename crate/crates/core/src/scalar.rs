//! Numeric field abstraction shared by the exact and floating-point paths.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt::Debug;

/// Exact rational number used throughout polytope preprocessing.
pub type Q = BigRational;

/// Absolute tolerance used by the floating-point implementation of [`Scalar`].
pub const FLOAT_EPS: f64 = 1e-9;

/// Ordered field with a sign test. For `f64` the sign test uses [`FLOAT_EPS`];
/// for [`Q`] it is exact.
pub trait Scalar: Clone + Debug + PartialOrd + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_pos(&self) -> bool;
    fn is_neg(&self) -> bool;
    fn to_f64(&self) -> f64;
    fn from_q(q: &Q) -> Self;

    fn is_zero_tol(&self) -> bool {
        !self.is_pos() && !self.is_neg()
    }
    /// In-place `self -= f * o`.
    fn sub_mul_assign(&mut self, f: &Self, o: &Self) {
        *self = self.sub(&f.mul(o));
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_pos(&self) -> bool {
        *self > FLOAT_EPS
    }
    fn is_neg(&self) -> bool {
        *self < -FLOAT_EPS
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn from_q(q: &Q) -> Self {
        q_to_f64(q)
    }
    fn sub_mul_assign(&mut self, f: &Self, o: &Self) {
        *self -= f * o;
    }
}

impl Scalar for Q {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_pos(&self) -> bool {
        self.is_positive()
    }
    fn is_neg(&self) -> bool {
        self.is_negative()
    }
    fn to_f64(&self) -> f64 {
        q_to_f64(self)
    }
    fn from_q(q: &Q) -> Self {
        q.clone()
    }
    fn sub_mul_assign(&mut self, f: &Self, o: &Self) {
        if !f.is_zero() && !o.is_zero() {
            *self -= f * o;
        }
    }
}

pub fn q_to_f64(q: &Q) -> f64 {
    ToPrimitive::to_f64(q).unwrap_or_else(|| {
        let n = ToPrimitive::to_f64(q.numer()).unwrap_or(f64::NAN);
        let d = ToPrimitive::to_f64(q.denom()).unwrap_or(f64::NAN);
        n / d
    })
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Exact conversion of a finite double into a rational.
pub fn q_from_f64(x: f64) -> Option<Q> {
    Q::from_float(x)
}

/// Rational approximation of a decimal value read from JSON. Values that are
/// short decimals map to the intended fraction (0.1 becomes 1/10, not the
/// binary expansion).
pub fn q_from_decimal(x: f64) -> Option<Q> {
    if !x.is_finite() {
        return None;
    }
    let s = format!("{x}");
    parse_q(&s).or_else(|| Q::from_float(x))
}

/// Parses `"a/b"`, integers, or plain decimals such as `"0.25"` or `"-1e-3"`.
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Q::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(k) => (&s[..k], s[k + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let neg = mant.starts_with('-');
    let mant = mant.trim_start_matches(['-', '+']);
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut num: BigInt = digits.parse().ok()?;
    if neg {
        num = -num;
    }
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    Some(if scale >= 0 {
        Q::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        Q::new(num, num_traits::pow(ten, (-scale) as usize))
    })
}

pub fn fmt_q(q: &Q) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn q_abs(q: &Q) -> Q {
    q.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_q("3/6"), Some(qr(1, 2)));
        assert_eq!(parse_q("0.25"), Some(qr(1, 4)));
        assert_eq!(parse_q("-1e-3"), Some(qr(-1, 1000)));
        assert_eq!(parse_q("7"), Some(qi(7)));
        assert_eq!(parse_q("1/0"), None);
        assert_eq!(parse_q("abc"), None);
    }

    #[test]
    fn decimal_conversion_prefers_short_fraction() {
        assert_eq!(q_from_decimal(0.1), Some(qr(1, 10)));
        assert_eq!(fmt_q(&qr(6, 4)), "3/2");
        assert_eq!(fmt_q(&qi(-2)), "-2");
    }
}
