//! Certified rational enclosures for the few irrational constants the
//! goodness thresholds need: `ln a / ln b` (the dimension of a power-law
//! dominating function) and `2^x` for rational `x`.
//!
//! All bounds are exact rationals bracketing the true value; refinement
//! tightens them monotonically. Directed rounding happens in two places only:
//! truncated `atanh` series (remainder added to the upper endpoint) and
//! integer square-root chains for `2^(r/2^t)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// A nonnegative real parameter: exactly rational, or `ln(a)/ln(b)` with
/// integer `a, b >= 2` (covers the Cantor dimension `ln 2 / ln 3`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Rational(BigRational),
    LogRatio { a: u32, b: u32 },
}

impl ParamValue {
    pub fn rational_i64(num: i64, den: i64) -> Self {
        ParamValue::Rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_f64(v: f64) -> Self {
        ParamValue::Rational(BigRational::from_float(v).expect("finite float"))
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            ParamValue::Rational(q) => Some(q),
            ParamValue::LogRatio { .. } => None,
        }
    }

    /// Certified enclosure; `level` doubles the series length each step.
    pub fn enclosure(&self, level: u32) -> (BigRational, BigRational) {
        match self {
            ParamValue::Rational(q) => (q.clone(), q.clone()),
            ParamValue::LogRatio { a, b } => {
                let terms = 8usize << level.min(12);
                let (la_lo, la_hi) = ln_bounds(*a, terms);
                let (lb_lo, lb_hi) = ln_bounds(*b, terms);
                (la_lo / lb_hi, la_hi / lb_lo)
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            ParamValue::Rational(q) => rational_to_f64(q),
            ParamValue::LogRatio { a, b } => (*a as f64).ln() / (*b as f64).ln(),
        }
    }
}

pub fn rational_to_f64(q: &BigRational) -> f64 {
    let (nf, ns) = bigint_to_f64_scaled(q.numer());
    let (df, ds) = bigint_to_f64_scaled(q.denom());
    (nf / df) * ((ns - ds) as f64).exp2()
}

/// `(v, s)` with `n ≈ v * 2^s`; keeps huge integers out of the float range.
fn bigint_to_f64_scaled(n: &BigInt) -> (f64, i64) {
    use num_traits::ToPrimitive;
    let bits = n.bits();
    if bits <= 992 {
        (n.to_f64().expect("in range"), 0)
    } else {
        let shift = bits - 64;
        ((n >> shift).to_f64().expect("in range"), shift as i64)
    }
}

/// Rational enclosure of `ln n` for integer `n >= 2` from the series
/// `ln n = 2 atanh((n-1)/(n+1))`, with the tail bounded by a geometric series.
pub fn ln_bounds(n: u32, terms: usize) -> (BigRational, BigRational) {
    assert!(n >= 2);
    let p = BigInt::from(n - 1);
    let q = BigInt::from(n + 1);
    let x = BigRational::new(p, q);
    let x2 = x.clone() * x.clone();
    let mut sum = BigRational::zero();
    let mut pow = x.clone(); // x^(2k+1)
    for k in 0..terms {
        sum += pow.clone() / BigRational::from_integer(BigInt::from(2 * k as i64 + 1));
        pow *= x2.clone();
    }
    // tail <= x^(2N+1)/(2N+1) * 1/(1-x^2)
    let tail = pow / BigRational::from_integer(BigInt::from(2 * terms as i64 + 1))
        / (BigRational::one() - x2);
    let two = BigRational::from_integer(BigInt::from(2));
    (sum.clone() * two.clone(), (sum + tail) * two)
}

fn isqrt_floor(n: &BigInt) -> BigInt {
    n.sqrt()
}

fn isqrt_ceil(n: &BigInt) -> BigInt {
    let s = n.sqrt();
    if &(&s * &s) < n {
        s + 1
    } else {
        s
    }
}

/// Enclosure of `2^(r / 2^t)` for `0 <= r < 2^t`, in fixed point with `bits`
/// fractional bits, via square-root chains `2^(1/2^s)`.
fn pow2_frac_fixed(r: &BigInt, t: u32, bits: u32) -> (BigInt, BigInt) {
    let scale = BigInt::one() << bits;
    let mut lo_acc = scale.clone();
    let mut hi_acc = scale.clone();
    if r.is_zero() {
        return (lo_acc, hi_acc);
    }
    // chain[s-1] brackets 2^(1/2^s) * 2^bits
    let mut lo_chain = Vec::with_capacity(t as usize);
    let mut hi_chain = Vec::with_capacity(t as usize);
    let mut lo = isqrt_floor(&(BigInt::from(2) << (2 * bits)));
    let mut hi = isqrt_ceil(&(BigInt::from(2) << (2 * bits)));
    for _ in 0..t {
        lo_chain.push(lo.clone());
        hi_chain.push(hi.clone());
        lo = isqrt_floor(&(&lo << bits));
        hi = isqrt_ceil(&(&hi << bits));
    }
    for i in 0..t {
        if r.bit(i as u64) {
            // bit i of r contributes exponent 2^i / 2^t = 1 / 2^(t-i)
            let s = (t - i) as usize;
            lo_acc = (&lo_acc * &lo_chain[s - 1]) >> bits;
            hi_acc = (&hi_acc * &hi_chain[s - 1] + (&scale - 1)) >> bits;
        }
    }
    (lo_acc, hi_acc)
}

/// Certified rational enclosure of `2^x` for rational `x`.
pub fn pow2_bounds(x: &BigRational, prec_bits: u32) -> (BigRational, BigRational) {
    if x.is_integer() {
        let v = pow2_exact_int(x.to_integer());
        return (v.clone(), v);
    }
    if x.is_negative() {
        let (lo, hi) = pow2_bounds(&-x.clone(), prec_bits);
        return (lo.recip().min(hi.clone().recip()), hi.recip().max(lo.recip()));
    }
    let t = prec_bits;
    let bits = prec_bits + 64;
    // m/2^t <= x < (m+1)/2^t
    let m = (x.clone() * BigRational::from_integer(BigInt::one() << t)).floor().to_integer();
    let make = |mm: BigInt, round_up: bool| -> BigRational {
        use num_traits::Euclid;
        let two_t = BigInt::one() << t;
        let q = mm.div_euclid(&two_t);
        let r = mm.rem_euclid(&two_t);
        let (frac_lo, frac_hi) = pow2_frac_fixed(&r, t, bits);
        let frac = if round_up { frac_hi } else { frac_lo };
        let base = BigRational::new(frac, BigInt::one() << bits);
        base * pow2_exact_int_big(&q)
    };
    (make(m.clone(), false), make(m + 1, true))
}

fn pow2_exact_int(k: BigInt) -> BigRational {
    pow2_exact_int_big(&k)
}

fn pow2_exact_int_big(k: &BigInt) -> BigRational {
    use num_traits::ToPrimitive;
    let ki = k.to_i64().expect("pow2 exponent fits i64");
    if ki >= 0 {
        BigRational::from_integer(BigInt::one() << ki as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-ki) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rf(q: &BigRational) -> f64 {
        rational_to_f64(q)
    }

    #[test]
    fn ln_enclosures_bracket() {
        // float comparisons carry the f64 rounding of the reference value
        let (lo2, hi2) = ln_bounds(2, 24);
        assert!(rf(&lo2) <= std::f64::consts::LN_2 + 1e-14);
        assert!(std::f64::consts::LN_2 <= rf(&hi2) + 1e-14);
        assert!(rf(&hi2) - rf(&lo2) < 1e-20);
        let (lo3, hi3) = ln_bounds(3, 24);
        assert!(rf(&lo3) <= 3f64.ln() + 1e-14 && 3f64.ln() <= rf(&hi3) + 1e-14);
        assert!(lo3 < hi3);
    }

    #[test]
    fn cantor_dimension_enclosure() {
        let d = ParamValue::LogRatio { a: 2, b: 3 };
        let (lo, hi) = d.enclosure(2);
        let truth = 2f64.ln() / 3f64.ln();
        assert!(rf(&lo) <= truth && truth <= rf(&hi));
        assert!(rf(&hi) - rf(&lo) < 1e-12);
        // refinement narrows
        let (lo2, hi2) = d.enclosure(4);
        assert!(lo2 >= lo && hi2 <= hi);
    }

    #[test]
    fn pow2_brackets_and_narrows() {
        for (num, den) in [(1i64, 5i64), (-6, 5), (3, 7), (12, 5)] {
            let x = BigRational::new(BigInt::from(num), BigInt::from(den));
            let truth = (num as f64 / den as f64).exp2();
            let (lo, hi) = pow2_bounds(&x, 48);
            assert!(rf(&lo) <= truth * (1.0 + 1e-12), "lo {} vs {truth}", rf(&lo));
            assert!(rf(&hi) >= truth * (1.0 - 1e-12), "hi {} vs {truth}", rf(&hi));
            assert!(rf(&hi) - rf(&lo) < 1e-10 * truth.abs().max(1.0));
        }
    }

    #[test]
    fn pow2_exact_on_integers() {
        let x = BigRational::from_integer(BigInt::from(-3));
        let (lo, hi) = pow2_bounds(&x, 16);
        assert_eq!(lo, hi);
        assert_eq!(rf(&lo), 0.125);
    }
}
