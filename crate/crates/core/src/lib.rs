//! Exact-arithmetic laboratory for singular integrals on upper doubling measures.
//!
//! Everything is built over finite atomic measures with dyadic-rational
//! geometry, so set memberships, cube containments and martingale identities
//! can be decided exactly. Floating point only enters where a quantity is
//! genuinely transcendental (L^p norms with fractional p, kernel magnitudes),
//! and every such place carries an explicit tolerance.
//!
//! Module map:
//! - [`dyadic`]: dyadic rationals `m * 2^e` and sup-norm box geometry
//! - [`interval`]: certified rational enclosures for `ln a / ln b` and `2^x`
//! - [`real`]: the scalar abstraction shared by `f64` and `BigRational` runs
//! - [`measure`]: atomic measures, dominating functions, doubling checks
//! - [`grid`]: randomly shifted dyadic lattices and cube arithmetic
//! - [`goodness`]: good/bad cube classification and badness statistics
//! - [`martingale`]: averages, difference operators, square functions
//! - [`corona`]: stopping trees, quasi-orthogonality, layer families
//! - [`operator`]: kernels, testing constants, operator-norm estimation
//! - [`decomposition`]: the bilinear-form ledger, inside/separated/nearby
//!   partition, paraproduct regrouping, nearby-pair surgery
//! - [`lab`]: scenario assembly and report-producing studies

pub mod corona;
pub mod decomposition;
pub mod dyadic;
pub mod goodness;
pub mod grid;
pub mod interval;
pub mod lab;
pub mod martingale;
pub mod measure;
pub mod operator;
pub mod real;
pub mod rng;

pub use dyadic::Dyadic;
pub use real::Real;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CzError {
    #[error("measure error: {0}")]
    Measure(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("point {0} outside the top cube")]
    OutOfDomain(String),
    #[error("level {0} outside grid range [{1}, {2}]")]
    LevelRange(i32, i32, i32),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CzError>;
