//! Exact dyadic rationals and sup-norm box geometry.
//!
//! Every coordinate, cube anchor, side length and set distance in this crate
//! is a [`Dyadic`]: `mantissa * 2^exponent` with the mantissa odd (or zero).
//! Cube membership and boundary distances therefore never touch floating
//! point, which is what keeps the good/bad classification and the partition
//! identities downstream exact.

use crate::{CzError, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A dyadic rational `m * 2^e`, normalized so `m` is odd or the value is zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dyadic {
    m: i128,
    e: i32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { m: 0, e: 0 };
    pub const ONE: Dyadic = Dyadic { m: 1, e: 0 };

    pub fn new(mantissa: i128, exponent: i32) -> Self {
        let mut d = Dyadic { m: mantissa, e: exponent };
        d.normalize();
        d
    }

    pub fn from_int(v: i64) -> Self {
        Self::new(v as i128, 0)
    }

    /// `2^k`.
    pub fn two_pow(k: i32) -> Self {
        Dyadic { m: 1, e: k }
    }

    fn normalize(&mut self) {
        if self.m == 0 {
            self.e = 0;
            return;
        }
        let tz = self.m.trailing_zeros();
        self.m >>= tz;
        self.e += tz as i32;
    }

    pub fn mantissa(&self) -> i128 {
        self.m
    }

    pub fn exponent(&self) -> i32 {
        self.e
    }

    pub fn is_zero(&self) -> bool {
        self.m == 0
    }

    pub fn signum(&self) -> i32 {
        self.m.signum() as i32
    }

    pub fn abs(&self) -> Self {
        Dyadic { m: self.m.abs(), e: self.e }
    }

    pub fn halve(&self) -> Self {
        if self.m == 0 {
            *self
        } else {
            Dyadic { m: self.m, e: self.e - 1 }
        }
    }

    pub fn double(&self) -> Self {
        if self.m == 0 {
            *self
        } else {
            Dyadic { m: self.m, e: self.e + 1 }
        }
    }

    /// Aligned mantissas at the smaller exponent. Panics on overflow, which at
    /// desk scale (exponents within ±200, mantissas < 2^80) cannot happen.
    fn aligned(&self, other: &Self) -> (i128, i128, i32) {
        if self.m == 0 {
            return (0, other.m, other.e);
        }
        if other.m == 0 {
            return (self.m, 0, self.e);
        }
        let e = self.e.min(other.e);
        let a = self
            .m
            .checked_shl((self.e - e) as u32)
            .expect("dyadic alignment overflow");
        let b = other
            .m
            .checked_shl((other.e - e) as u32)
            .expect("dyadic alignment overflow");
        (a, b, e)
    }

    /// Floor of `self / 2^k` as an integer.
    pub fn floor_div_pow2(&self, k: i32) -> i128 {
        if self.m == 0 {
            return 0;
        }
        let shift = self.e - k;
        if shift >= 0 {
            self.m.checked_shl(shift as u32).expect("dyadic shift overflow")
        } else {
            let s = (-shift) as u32;
            // arithmetic shift right floors toward -inf for negatives
            self.m >> s.min(127)
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.m as f64 * (self.e as f64).exp2()
    }

    pub fn to_rational(&self) -> BigRational {
        let m = BigInt::from(self.m);
        if self.e >= 0 {
            BigRational::from_integer(m << self.e as usize)
        } else {
            BigRational::new(m, BigInt::from(1) << (-self.e) as usize)
        }
    }

    /// Exact conversion from a finite `f64` (every finite float is dyadic).
    pub fn from_f64_exact(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(CzError::Parse(format!("non-finite value {v}")));
        }
        if v == 0.0 {
            return Ok(Dyadic::ZERO);
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 1 { -1i128 } else { 1 };
        let exp_bits = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as i128;
        let (m, e) = if exp_bits == 0 {
            (frac, -1074)
        } else {
            (frac | (1 << 52), exp_bits - 1075)
        };
        Ok(Dyadic::new(sign * m, e))
    }

    /// Parse `m*2^e`, plain integers, or decimals that are exactly dyadic.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((m, e)) = s.split_once("*2^") {
            let m: i128 = m
                .trim()
                .parse()
                .map_err(|_| CzError::Parse(format!("bad mantissa in {s:?}")))?;
            let e: i32 = e
                .trim()
                .parse()
                .map_err(|_| CzError::Parse(format!("bad exponent in {s:?}")))?;
            return Ok(Dyadic::new(m, e));
        }
        if let Some((int, frac)) = s.split_once('.') {
            let neg = int.starts_with('-');
            let int_part: i128 = if int.is_empty() || int == "-" {
                0
            } else {
                int.parse()
                    .map_err(|_| CzError::Parse(format!("bad number {s:?}")))?
            };
            let digits = frac.len() as u32;
            if digits > 30 {
                return Err(CzError::Parse(format!("too many decimals in {s:?}")));
            }
            let frac_num: i128 = if frac.is_empty() {
                0
            } else {
                frac.parse()
                    .map_err(|_| CzError::Parse(format!("bad number {s:?}")))?
            };
            // value = int + frac/10^digits; dyadic iff 5^digits divides frac
            let five_pow = 5i128.pow(digits);
            if frac_num % five_pow != 0 {
                return Err(CzError::Parse(format!(
                    "{s:?} is not an exact dyadic rational; use m*2^e notation"
                )));
            }
            let frac_dyadic = Dyadic::new(frac_num / five_pow, -(digits as i32));
            let int_dyadic = Dyadic::new(int_part.abs(), 0);
            let mag = int_dyadic + frac_dyadic;
            return Ok(if neg || int_part < 0 { -mag } else { mag });
        }
        let v: i128 = s
            .parse()
            .map_err(|_| CzError::Parse(format!("bad number {s:?}")))?;
        Ok(Dyadic::new(v, 0))
    }
}

impl Add for Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: Dyadic) -> Dyadic {
        let (a, b, e) = self.aligned(&rhs);
        Dyadic::new(a.checked_add(b).expect("dyadic add overflow"), e)
    }
}

impl Sub for Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: Dyadic) -> Dyadic {
        let (a, b, e) = self.aligned(&rhs);
        Dyadic::new(a.checked_sub(b).expect("dyadic sub overflow"), e)
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic { m: -self.m, e: self.e }
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;
    // exponents add under multiplication
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: Dyadic) -> Dyadic {
        Dyadic::new(
            self.m.checked_mul(rhs.m).expect("dyadic mul overflow"),
            self.e + rhs.e,
        )
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.m.signum(), other.m.signum()) {
            (a, b) if a != b => a.cmp(&b),
            (0, 0) => Ordering::Equal,
            _ => {
                let (a, b, _) = self.aligned(other);
                a.cmp(&b)
            }
        }
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.e >= 0 {
            match self.m.checked_shl(self.e as u32) {
                Some(v) => write!(f, "{v}"),
                None => write!(f, "{}*2^{}", self.m, self.e),
            }
        } else {
            write!(f, "{}*2^{}", self.m, self.e)
        }
    }
}

/// Sup-norm distance between two points.
pub fn sup_dist(a: &[Dyadic], b: &[Dyadic]) -> Dyadic {
    debug_assert_eq!(a.len(), b.len());
    let mut best = Dyadic::ZERO;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y).abs();
        if d > best {
            best = d;
        }
    }
    best
}

/// Axis-aligned box `[lo, lo + side]^n`, used both for grid cubes and for
/// free-floating testing cubes. Distances treat the box as closed.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<Dyadic>,
    pub side: Dyadic,
}

impl BoxRegion {
    pub fn new(lo: Vec<Dyadic>, side: Dyadic) -> Self {
        debug_assert!(side.signum() > 0);
        BoxRegion { lo, side }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn hi(&self, d: usize) -> Dyadic {
        self.lo[d] + self.side
    }

    pub fn midpoint(&self) -> Vec<Dyadic> {
        self.lo.iter().map(|a| *a + self.side.halve()).collect()
    }

    /// Closed-box membership.
    pub fn contains_closed(&self, x: &[Dyadic]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lo[d] && *v <= self.hi(d))
    }

    /// Half-open membership `[lo, lo+side)^n`, the grid-cube convention.
    pub fn contains_half_open(&self, x: &[Dyadic]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lo[d] && *v < self.hi(d))
    }

    /// `self ⊆ other` as closed boxes.
    pub fn subset_of(&self, other: &BoxRegion) -> bool {
        (0..self.dim()).all(|d| self.lo[d] >= other.lo[d] && self.hi(d) <= other.hi(d))
    }

    /// Sup-norm distance between the closed boxes.
    pub fn dist(&self, other: &BoxRegion) -> Dyadic {
        let mut best = Dyadic::ZERO;
        for d in 0..self.dim() {
            let gap1 = self.lo[d] - other.hi(d);
            let gap2 = other.lo[d] - self.hi(d);
            let g = gap1.max(gap2);
            if g > best {
                best = g;
            }
        }
        best
    }

    /// Distance from this box to the boundary of `other`.
    ///
    /// Inside: the smallest face gap. Outside: the set distance. Straddling: 0.
    pub fn dist_to_boundary(&self, other: &BoxRegion) -> Dyadic {
        if self.subset_of(other) {
            let mut best: Option<Dyadic> = None;
            for d in 0..self.dim() {
                let left = self.lo[d] - other.lo[d];
                let right = other.hi(d) - self.hi(d);
                let g = left.min(right);
                best = Some(match best {
                    None => g,
                    Some(b) => b.min(g),
                });
            }
            best.unwrap_or(Dyadic::ZERO)
        } else {
            self.dist(other)
        }
    }

    /// Concentric dilate `t * self` for rational `t = num/den > 0`, returned as
    /// closed interval bounds per axis (exact rationals, not a BoxRegion,
    /// because `t*side` need not be dyadic).
    pub fn dilate_bounds(&self, num: i64, den: i64) -> Vec<(BigRational, BigRational)> {
        let t = BigRational::new(BigInt::from(num), BigInt::from(den));
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        (0..self.dim())
            .map(|d| {
                let c = self.lo[d].to_rational() + self.side.to_rational() * half.clone();
                let r = self.side.to_rational() * t.clone() * half.clone();
                (c.clone() - r.clone(), c + r)
            })
            .collect()
    }
}
