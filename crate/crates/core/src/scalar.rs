//! Number abstraction shared by the exact and floating-point code paths.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// A probability carried both as a float and, when known, exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Prob {
    pub value: f64,
    pub exact: Option<BigRational>,
}

impl Prob {
    pub fn float(value: f64) -> Self {
        Prob { value, exact: None }
    }

    pub fn exact(r: BigRational) -> Self {
        Prob { value: ToPrimitive::to_f64(&r).unwrap_or(f64::NAN), exact: Some(r) }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Prob::exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            return Some(Prob::exact(BigRational::new(n, d)));
        }
        if let Ok(n) = s.parse::<BigInt>() {
            return Some(Prob::exact(BigRational::from_integer(n)));
        }
        s.parse::<f64>().ok().map(Prob::float)
    }
}

/// JSON form of a probability: a number, or a string such as "1/3".
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ProbJson {
    Number(f64),
    Text(String),
}

impl ProbJson {
    pub fn to_prob(&self) -> Option<Prob> {
        match self {
            ProbJson::Number(x) => Some(Prob::float(*x)),
            ProbJson::Text(s) => Prob::parse(s),
        }
    }

    pub fn from_prob(p: &Prob) -> Self {
        match &p.exact {
            Some(r) => ProbJson::Text(r.to_string()),
            None => ProbJson::Number(p.value),
        }
    }
}

pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    /// Whether this backend computes without rounding.
    const EXACT: bool;

    fn from_prob(p: &Prob) -> Option<Self>;
    fn from_u64(n: u64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs_val(&self) -> Self;

    /// Whether an iterate changed enough to keep iterating.
    fn differs(&self, other: &Self) -> bool {
        if Self::EXACT {
            self != other
        } else {
            let d = (self.to_f64() - other.to_f64()).abs();
            d > 1e-16 * self.to_f64().abs().max(1e-300)
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_prob(p: &Prob) -> Option<Self> {
        Some(p.value)
    }

    fn from_u64(n: u64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_prob(p: &Prob) -> Option<Self> {
        p.exact.clone()
    }

    fn from_u64(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }
}

/// Best rational approximation with denominator at most `max_den`
/// (continued fractions), if one lies within `tol` of `x`.
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64) / (k1 as f64) - x).abs() <= tol {
            return Some(BigRational::new(BigInt::from(h1), BigInt::from(k1)));
        }
        let frac = r - a;
        if frac.abs() < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(Prob::parse("1/2").unwrap(), Prob::ratio(1, 2));
        assert_eq!(Prob::parse("1").unwrap(), Prob::ratio(1, 1));
        assert_eq!(Prob::parse("0.25").unwrap().value, 0.25);
        assert!(Prob::parse("0.25").unwrap().exact.is_none());
        assert!(Prob::parse("1/0").is_none());
    }

    #[test]
    fn rationalize_recovers_small_fractions() {
        let r = rationalize(1.0 / 3.0, 1000, 1e-12).unwrap();
        assert_eq!(r, BigRational::new(1.into(), 3.into()));
        assert_eq!(rationalize(0.5, 10, 1e-12).unwrap(), BigRational::new(1.into(), 2.into()));
        assert!(rationalize(std::f64::consts::PI, 1000, 1e-12).is_none());
    }
}
