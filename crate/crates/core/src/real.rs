//! The scalar abstraction behind the two arithmetic modes.
//!
//! `f64` is the float mode; `BigRational` is the exact mode. Kernel values are
//! always produced as `f64` and lifted losslessly (every finite float is a
//! dyadic rational), so both modes sum the *same* numbers and an exact-mode
//! identity certifies the float-mode residual.

use crate::dyadic::Dyadic;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// True when arithmetic is exact and identity checks can demand equality.
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn from_f64_lossless(v: f64) -> Self;
    fn from_dyadic(d: &Dyadic) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn is_zero(&self) -> bool;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num) / Self::from_i64(den)
    }
}

impl Real for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_f64_lossless(v: f64) -> Self {
        v
    }
    fn from_dyadic(d: &Dyadic) -> Self {
        d.to_f64()
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
}

impl Real for BigRational {
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as num_traits::One>::one()
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(v.into())
    }
    fn from_f64_lossless(v: f64) -> Self {
        BigRational::from_float(v).expect("finite float")
    }
    fn from_dyadic(d: &Dyadic) -> Self {
        d.to_rational()
    }
    fn to_f64(&self) -> f64 {
        crate::interval::rational_to_f64(self)
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
}

/// Which scalar a study runs on; reports record it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arith {
    Rational,
    Float,
}

impl std::str::FromStr for Arith {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rational" => Ok(Arith::Rational),
            "float" => Ok(Arith::Float),
            other => Err(format!("unknown arithmetic mode {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_lift_round_trips() {
        for v in [0.1 + 0.2, -1.0 / 3.0, 2.5e-17] {
            let q = BigRational::from_f64_lossless(v);
            assert_eq!(q.to_f64(), v);
        }
    }
}
