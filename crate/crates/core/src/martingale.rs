//! Martingale calculus on a grid: averages, difference operators, expansions,
//! transforms, square functions and the Stein comparison.
//!
//! Functions live on the atoms of the measure ([`SupportFunction`]); cube
//! averages use the convention `⟨f⟩_Q = 0` when `μ(Q) = 0`. Difference
//! functions are stored as per-child constants, so an expansion costs
//! `O(#cubes · 2^n)` memory rather than `O(#cubes · #atoms)`.

use crate::grid::{Cube, CubeKey, GridIndex};
use crate::measure::Measure;
use crate::real::Real;
use crate::{CzError, Result};
use std::collections::BTreeMap;

/// A function known on the atoms of a measure: one value per atom, in the
/// measure's canonical atom order.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportFunction<R: Real> {
    pub values: Vec<R>,
}

impl<R: Real> SupportFunction<R> {
    pub fn zero(n: usize) -> Self {
        SupportFunction { values: vec![R::zero(); n] }
    }

    pub fn constant(n: usize, c: R) -> Self {
        SupportFunction { values: vec![c; n] }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> R) -> Self {
        SupportFunction { values: (0..n).map(f).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&self, o: &Self) -> Self {
        SupportFunction {
            values: self
                .values
                .iter()
                .zip(&o.values)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        SupportFunction {
            values: self
                .values
                .iter()
                .zip(&o.values)
                .map(|(a, b)| a.clone() - b.clone())
                .collect(),
        }
    }

    pub fn scale(&self, c: &R) -> Self {
        SupportFunction {
            values: self.values.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        SupportFunction { values: self.values.iter().map(|a| a.abs()).collect() }
    }

    /// `∫ f g dμ`, exact in the scalar.
    pub fn inner(&self, o: &Self, m: &Measure) -> R {
        let mut acc = R::zero();
        for i in 0..self.values.len() {
            acc = acc
                + self.values[i].clone() * o.values[i].clone() * R::from_dyadic(&m.weight(i));
        }
        acc
    }

    /// `∫ f dμ` restricted to the atoms in `idx`.
    pub fn integral_over(&self, idx: &[u32], m: &Measure) -> R {
        let mut acc = R::zero();
        for &i in idx {
            acc = acc + self.values[i as usize].clone() * R::from_dyadic(&m.weight(i as usize));
        }
        acc
    }

    /// `‖f‖_2^2` exactly in the scalar.
    pub fn l2_norm_sq(&self, m: &Measure) -> R {
        self.inner(self, m)
    }

    /// `‖f‖_p` in floats; `p` is a real parameter so fractional powers go
    /// through `f64` (tolerance 1e-10 by policy).
    pub fn lp_norm(&self, m: &Measure, p: f64) -> f64 {
        debug_assert!(p >= 1.0);
        let mut acc = 0.0;
        for i in 0..self.values.len() {
            acc += self.values[i].to_f64().abs().powf(p) * m.weight(i).to_f64();
        }
        acc.powf(1.0 / p)
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.values.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }
}

/// `⟨f⟩ = μ(E)^{-1} ∫_E f dμ` over the atoms `idx`, zero when `μ(E) = 0`.
pub fn average_over<R: Real>(f: &SupportFunction<R>, idx: &[u32], m: &Measure) -> R {
    let mass = m.mass_of(idx);
    if mass.is_zero() {
        return R::zero();
    }
    f.integral_over(idx, m) / R::from_dyadic(&mass)
}

/// `⟨f⟩_Q` for a grid cube.
pub fn average<R: Real>(f: &SupportFunction<R>, q: &Cube, index: &GridIndex) -> R {
    average_over(f, index.atoms_in(q), &index.measure)
}

/// The martingale difference `Δ_Q f` as per-child constants.
#[derive(Clone, Debug)]
pub struct DeltaFn<R: Real> {
    pub cube: Cube,
    /// value on each child, child-slot order
    pub child_values: Vec<R>,
}

impl<R: Real> DeltaFn<R> {
    pub fn is_zero(&self) -> bool {
        self.child_values.iter().all(|v| v.is_zero())
    }

    /// Materialize on atoms (zero outside the cube).
    pub fn to_support(&self, index: &GridIndex) -> SupportFunction<R> {
        let mut out = SupportFunction::zero(index.measure.len());
        let children = index.grid.children(&self.cube).expect("children in range");
        for (slot, child) in children.iter().enumerate() {
            for &i in index.atoms_in(child) {
                out.values[i as usize] = self.child_values[slot].clone();
            }
        }
        out
    }
}

/// `Δ_Q f = Σ_{Q' ∈ ch(Q)} (⟨f⟩_{Q'} - ⟨f⟩_Q) 1_{Q'}`.
pub fn delta<R: Real>(f: &SupportFunction<R>, q: &Cube, index: &GridIndex) -> Result<DeltaFn<R>> {
    index.grid.check_level(q.level - 1)?;
    let avg_q = average(f, q, index);
    let child_values = index
        .grid
        .children(q)?
        .iter()
        .map(|c| {
            let atoms = index.atoms_in(c);
            if index.measure.mass_of(atoms).is_zero() {
                // zero-mass child carries no atoms; constant irrelevant μ-a.e.
                R::zero()
            } else {
                average(f, c, index) - avg_q.clone()
            }
        })
        .collect();
    Ok(DeltaFn { cube: q.clone(), child_values })
}

/// Full martingale expansion over a grid: the top-cube average plus every
/// nonvanishing difference of an occupied cube.
#[derive(Clone, Debug)]
pub struct MartingaleExpansion<R: Real> {
    pub top: Cube,
    pub top_avg: R,
    /// cube key -> per-child constants; only cubes with `Δ_Q f ≠ 0` on atoms
    pub deltas: BTreeMap<CubeKey, DeltaFn<R>>,
}

/// Expand `f` over all occupied cubes of the grid. The grid must resolve
/// atoms: at the finest level every cell holds at most one atom.
pub fn expand<R: Real>(f: &SupportFunction<R>, index: &GridIndex) -> Result<MartingaleExpansion<R>> {
    let finest = index.grid.level_min();
    for (_, atoms) in index.occupied(finest) {
        if atoms.len() > 1 {
            return Err(CzError::Contract(format!(
                "grid level {finest} does not resolve atoms ({} share a cell)",
                atoms.len()
            )));
        }
    }
    let top = index.top().clone();
    let top_avg = average(f, &top, index);
    let mut deltas = BTreeMap::new();
    for k in (finest + 1..=index.grid.level_max()).rev() {
        for (cube, atoms) in index.occupied(k) {
            if atoms.len() < 2 {
                continue; // single-atom cubes have constant averages below
            }
            let d = delta(f, &cube, index)?;
            if !d.is_zero() {
                deltas.insert(cube.key(), d);
            }
        }
    }
    Ok(MartingaleExpansion { top, top_avg, deltas })
}

/// `reconstruct(expand(f)) = f` exactly, atom by atom.
pub fn reconstruct<R: Real>(exp: &MartingaleExpansion<R>, index: &GridIndex) -> SupportFunction<R> {
    transform_with(exp, index, |_| Some(R::one()), true)
}

/// `Σ ε_Q Δ_Q f` with `|ε_Q| ≤ 1` (top term dropped). `None` means `ε_Q = 0`.
pub fn transform<R: Real>(
    exp: &MartingaleExpansion<R>,
    index: &GridIndex,
    eps: impl Fn(&Cube) -> Option<R>,
) -> Result<SupportFunction<R>> {
    for d in exp.deltas.values() {
        if let Some(e) = eps(&d.cube) {
            if e.abs() > R::one() {
                return Err(CzError::Contract("martingale transform needs |ε| ≤ 1".into()));
            }
        }
    }
    Ok(transform_with(exp, index, eps, false))
}

fn transform_with<R: Real>(
    exp: &MartingaleExpansion<R>,
    index: &GridIndex,
    eps: impl Fn(&Cube) -> Option<R>,
    include_top: bool,
) -> SupportFunction<R> {
    let mut out = if include_top {
        SupportFunction::constant(index.measure.len(), exp.top_avg.clone())
    } else {
        SupportFunction::zero(index.measure.len())
    };
    for d in exp.deltas.values() {
        let Some(e) = eps(&d.cube) else { continue };
        if e.is_zero() {
            continue;
        }
        let children = index.grid.children(&d.cube).expect("in range");
        for (slot, child) in children.iter().enumerate() {
            if d.child_values[slot].is_zero() {
                continue;
            }
            let add = e.clone() * d.child_values[slot].clone();
            for &i in index.atoms_in(child) {
                let v: &mut R = &mut out.values[i as usize];
                *v = v.clone() + add.clone();
            }
        }
    }
    out
}

/// `‖g‖_p / ‖f‖_p` diagnostic.
pub fn lp_ratio<R: Real>(
    f: &SupportFunction<R>,
    g: &SupportFunction<R>,
    m: &Measure,
    p: f64,
) -> f64 {
    g.lp_norm(m, p) / f.lp_norm(m, p)
}

/// Pointwise square function `Σ_k |Δ_{j,k} f|²` (returned squared so the
/// exact scalar can carry it).
pub fn square_function_sq<R: Real>(
    exp: &MartingaleExpansion<R>,
    index: &GridIndex,
) -> SupportFunction<R> {
    let mut out = SupportFunction::zero(index.measure.len());
    for d in exp.deltas.values() {
        let children = index.grid.children(&d.cube).expect("in range");
        for (slot, child) in children.iter().enumerate() {
            if d.child_values[slot].is_zero() {
                continue;
            }
            let sq = d.child_values[slot].clone() * d.child_values[slot].clone();
            for &i in index.atoms_in(child) {
                let v: &mut R = &mut out.values[i as usize];
                *v = v.clone() + sq.clone();
            }
        }
    }
    out
}

pub fn square_function<R: Real>(
    exp: &MartingaleExpansion<R>,
    index: &GridIndex,
) -> SupportFunction<f64> {
    let sq = square_function_sq(exp, index);
    SupportFunction { values: sq.values.iter().map(|v| v.to_f64().sqrt()).collect() }
}

/// `E_{j,k} f`: conditional expectation at one level.
pub fn level_expectation<R: Real>(
    f: &SupportFunction<R>,
    index: &GridIndex,
    k: i32,
) -> SupportFunction<R> {
    let mut out = SupportFunction::zero(index.measure.len());
    for (cube, atoms) in index.occupied(k) {
        let avg = average(f, &cube, index);
        for &i in atoms {
            out.values[i as usize] = avg.clone();
        }
    }
    out
}

/// Stein comparison at exponent `p`: `LHS = ‖(Σ_k |E_{j,k} f_k|²)^{1/2}‖_p`
/// against `RHS = ‖(Σ_k |f_k|²)^{1/2}‖_p`, one function per level, coarse to
/// fine. At `p = 2` conditional expectations contract, so `LHS ≤ RHS` holds
/// with constant one; other `p` are reported as diagnostics.
pub fn stein_ratio<R: Real>(fs: &[SupportFunction<R>], index: &GridIndex, p: f64) -> (f64, f64) {
    let n = index.measure.len();
    let levels: Vec<i32> = (index.grid.level_min()..=index.grid.level_max()).rev().collect();
    assert_eq!(fs.len(), levels.len(), "one function per level");
    let mut lhs_sq = vec![0.0f64; n];
    let mut rhs_sq = vec![0.0f64; n];
    for (f, &k) in fs.iter().zip(&levels) {
        let ef = level_expectation(f, index, k);
        for i in 0..n {
            lhs_sq[i] += ef.values[i].to_f64().powi(2);
            rhs_sq[i] += f.values[i].to_f64().powi(2);
        }
    }
    let norm = |v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (i, vi) in v.iter().enumerate().take(n) {
            acc += vi.sqrt().powf(p) * index.measure.weight(i).to_f64();
        }
        acc.powf(1.0 / p)
    };
    (norm(&lhs_sq), norm(&rhs_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DyadicGrid;
    use crate::measure::builtin;
    use crate::rng::Rng;
    use num_rational::BigRational;
    use std::sync::Arc;

    fn index_for(m: crate::measure::Measure, seed: u64) -> GridIndex {
        let lmin = m.resolving_level() - 1;
        let grid = Arc::new(DyadicGrid::over_measure(seed, 1, &m, lmin, 2).unwrap());
        GridIndex::new(grid, Arc::new(m))
    }

    fn random_fn(n: usize, rng: &mut Rng) -> SupportFunction<BigRational> {
        SupportFunction::from_fn(n, |_| {
            Real::from_f64_lossless(rng.next_signed_dyadic(12))
        })
    }

    fn zero_shift_index(m: crate::measure::Measure) -> GridIndex {
        let lmin = m.resolving_level() - 1;
        let mut grid = DyadicGrid::free(crate::grid::ShiftSequence::zero(1, 1, lmin, 1));
        grid.top = Some(grid.cube_at(1, vec![0]).unwrap());
        GridIndex::new(Arc::new(grid), Arc::new(m))
    }

    #[test]
    fn average_examples() {
        let m = builtin::uniform_1d(4).unwrap();
        let idx = zero_shift_index(m);
        // constant 1 averages to 1 on any cube of positive mass
        let ones: SupportFunction<BigRational> = SupportFunction::constant(4, Real::one());
        let top = idx.top().clone();
        assert_eq!(average(&ones, &top, &idx), <BigRational as Real>::one());
        // f = (0,1,2,3), Q = [0, 0.5): atoms 0,1 -> mean 1/2
        let f: SupportFunction<BigRational> =
            SupportFunction::from_fn(4, |i| Real::from_i64(i as i64));
        let half = idx
            .grid
            .cube_containing(&[crate::dyadic::Dyadic::ZERO], -1)
            .unwrap();
        assert_eq!(average(&f, &half, &idx), <BigRational as Real>::from_ratio(1, 2));
        // zero-measure cube averages to zero by convention
        let empty = idx.grid.cube_at(-3, vec![-5]).unwrap();
        assert!(idx.atoms_in(&empty).is_empty());
        assert_eq!(average(&f, &empty, &idx), <BigRational as Real>::zero());
    }

    #[test]
    fn delta_hand_case_two_atoms() {
        // atoms at 0.25 and 0.75, unit weights: Δ over [0,1) has child
        // values ((a-b)/2, (b-a)/2)
        let m = crate::measure::Measure::new(
            1,
            vec![
                crate::measure::Atom {
                    pos: vec![crate::dyadic::Dyadic::new(1, -2)],
                    weight: crate::dyadic::Dyadic::ONE,
                },
                crate::measure::Atom {
                    pos: vec![crate::dyadic::Dyadic::new(3, -2)],
                    weight: crate::dyadic::Dyadic::ONE,
                },
            ],
        )
        .unwrap();
        let mut grid = DyadicGrid::free(crate::grid::ShiftSequence::zero(1, 1, -4, 0));
        grid.top = Some(grid.cube_at(0, vec![0]).unwrap());
        let idx = GridIndex::new(Arc::new(grid), Arc::new(m));
        let f: SupportFunction<BigRational> =
            SupportFunction::from_fn(2, |i| Real::from_i64([5_i64, 9][i]));
        let top = idx.top().clone();
        let d = delta(&f, &top, &idx).unwrap();
        assert_eq!(d.child_values[0], <BigRational as Real>::from_i64(-2));
        assert_eq!(d.child_values[1], <BigRational as Real>::from_i64(2));
        let sup = d.to_support(&idx);
        assert!(sup.integral_over(&[0, 1], &idx.measure).is_zero());
    }

    #[test]
    fn delta_mean_zero_random() {
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 3);
        let mut rng = Rng::seed_from(17);
        for _ in 0..100 {
            let f = random_fn(16, &mut rng);
            let k = rng.next_range_i64(-3, 1) as i32;
            let cube = idx
                .grid
                .cube_containing(idx.measure.pos(rng.next_below(16) as usize), k)
                .unwrap();
            let d = delta(&f, &cube, &idx).unwrap();
            let atoms = idx.atoms_in(&cube).to_vec();
            assert!(d
                .to_support(&idx)
                .integral_over(&atoms, &idx.measure)
                .is_zero());
        }
    }

    #[test]
    fn expansion_reconstructs_exactly() {
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 5);
        let mut rng = Rng::seed_from(23);
        for _ in 0..50 {
            let f = random_fn(16, &mut rng);
            let exp = expand(&f, &idx).unwrap();
            assert_eq!(reconstruct(&exp, &idx), f);
        }
    }

    #[test]
    fn constant_expansion_is_top_only() {
        let m = builtin::uniform_1d(8).unwrap();
        let idx = index_for(m, 7);
        let f: SupportFunction<BigRational> =
            SupportFunction::constant(8, Real::from_ratio(3, 7));
        let exp = expand(&f, &idx).unwrap();
        assert!(exp.deltas.is_empty());
        assert_eq!(exp.top_avg, <BigRational as Real>::from_ratio(3, 7));
    }

    #[test]
    fn transform_telescopes_and_contracts() {
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 9);
        let mut rng = Rng::seed_from(29);
        let f = random_fn(16, &mut rng);
        let exp = expand(&f, &idx).unwrap();
        // ε ≡ 1 gives f - ⟨f⟩ 1
        let t1 = transform(&exp, &idx, |_| Some(Real::one())).unwrap();
        let centered = f.sub(&SupportFunction::constant(16, exp.top_avg.clone()));
        assert_eq!(t1, centered);
        // ε ≡ 0 gives zero
        let t0 = transform(&exp, &idx, |_| Some(Real::zero())).unwrap();
        assert!(t0.values.iter().all(|v| v.is_zero()));
        // random signs never increase the L² norm (exact Pythagoras)
        for _ in 0..20 {
            let signs: BTreeMap<CubeKey, BigRational> = exp
                .deltas
                .keys()
                .map(|k| {
                    let s: BigRational = if rng.next_bit() == 1 {
                        Real::one()
                    } else {
                        -<BigRational as Real>::one()
                    };
                    (k.clone(), s)
                })
                .collect();
            let tf = transform(&exp, &idx, |c| signs.get(&c.key()).cloned()).unwrap();
            assert!(tf.l2_norm_sq(&idx.measure) <= centered.l2_norm_sq(&idx.measure));
        }
        // out-of-range ε rejected
        assert!(transform(&exp, &idx, |_| Some(Real::from_i64(2))).is_err());
    }

    #[test]
    fn distinct_differences_orthogonal_exactly() {
        // any two distinct dyadic cubes are nested or disjoint; either way
        // the μ-inner product of their difference functions vanishes
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 27);
        let mut rng = Rng::seed_from(43);
        let f = random_fn(16, &mut rng);
        let exp = expand(&f, &idx).unwrap();
        let mats: Vec<SupportFunction<BigRational>> =
            exp.deltas.values().map(|d| d.to_support(&idx)).collect();
        for i in 0..mats.len() {
            for j in 0..mats.len() {
                if i != j {
                    assert!(mats[i].inner(&mats[j], &idx.measure).is_zero());
                }
            }
        }
    }

    #[test]
    fn parseval_at_p2() {
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 13);
        let mut rng = Rng::seed_from(37);
        let f = random_fn(16, &mut rng);
        let exp = expand(&f, &idx).unwrap();
        let sq = square_function_sq(&exp, &idx);
        // ‖Sf‖₂² + ⟨f⟩² μ(top) = ‖f‖₂², exactly
        let ones = SupportFunction::constant(16, <BigRational as Real>::one());
        let lhs = sq.inner(&ones, &idx.measure)
            + exp.top_avg.clone()
                * exp.top_avg.clone()
                * <BigRational as Real>::from_dyadic(&idx.measure.total_mass());
        assert_eq!(lhs, f.l2_norm_sq(&idx.measure));
    }

    #[test]
    fn square_function_of_constant_vanishes() {
        let m = builtin::uniform_1d(8).unwrap();
        let idx = index_for(m, 15);
        let f: SupportFunction<f64> = SupportFunction::constant(8, 2.5);
        let exp = expand(&f, &idx).unwrap();
        let s = square_function(&exp, &idx);
        assert_eq!(s.max_abs_f64(), 0.0);
    }

    #[test]
    fn stein_contraction_at_p2() {
        let m = builtin::uniform_1d(16).unwrap();
        let idx = index_for(m, 19);
        let n_levels = (idx.grid.level_max() - idx.grid.level_min()) as usize + 1;
        let mut rng = Rng::seed_from(41);
        for _ in 0..50 {
            let fs: Vec<SupportFunction<f64>> = (0..n_levels)
                .map(|_| SupportFunction::from_fn(16, |_| rng.next_signed_dyadic(10)))
                .collect();
            let (lhs, rhs) = stein_ratio(&fs, &idx, 2.0);
            assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} vs {rhs}");
        }
    }
}
