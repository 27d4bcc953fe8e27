//! The bilinear-form machinery: perturbation to good cubes, the expansion of
//! `⟨T f₁, f₂⟩`, the inside/separated/nearby partition, the
//! paraproduct/stopping/error split with the telescoping coefficients
//! `ε_{Q,S}`, the nearby-pair surgery sets, and decay diagnostics.
//!
//! Every split here is an exact identity — a finite regrouping of one sum of
//! kernel-weighted products — so in rational mode each check demands
//! equality, and float mode certifies a relative residual.

use crate::dyadic::Dyadic;
use crate::goodness::GoodnessContext;
use crate::grid::{long_distance, Cube, CubeKey, DyadicGrid, GridIndex};
use crate::martingale::{average, expand, MartingaleExpansion, SupportFunction};
use crate::operator::OperatorMatrix;
use crate::real::Real;
use crate::{CzError, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// O(1) pairings `⟨T 1_A, 1_B⟩` through a 2D prefix table over the matrix
/// `M[x][y] = K(x,y) w_x w_y`. In one dimension every grid cube is a
/// contiguous range of the (sorted) atom order, and general atom sets split
/// into maximal runs.
pub struct PairingEngine<R: Real> {
    n: usize,
    /// `prefix[i][j] = Σ_{x<i, y<j} M[x][y]`, flattened (n+1)×(n+1)
    prefix: Vec<R>,
}

impl<R: Real> PairingEngine<R> {
    pub fn new(op: &OperatorMatrix<R>) -> Self {
        let n = op.len();
        let width = n + 1;
        let mut prefix = vec![R::zero(); width * width];
        for i in 0..n {
            let wi = R::from_dyadic(&op.measure.weight(i));
            for j in 0..n {
                let m = op.entry(i, j).clone()
                    * wi.clone()
                    * R::from_dyadic(&op.measure.weight(j));
                prefix[(i + 1) * width + (j + 1)] = m
                    + prefix[i * width + (j + 1)].clone()
                    + prefix[(i + 1) * width + j].clone()
                    - prefix[i * width + j].clone();
            }
        }
        PairingEngine { n, prefix }
    }

    fn at(&self, i: usize, j: usize) -> &R {
        &self.prefix[i * (self.n + 1) + j]
    }

    /// `Σ_{x ∈ [r0,r1), y ∈ [c0,c1)} M[x][y]`.
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> R {
        self.at(r1, c1).clone() - self.at(r0, c1).clone() - self.at(r1, c0).clone()
            + self.at(r0, c0).clone()
    }

    /// `⟨T 1_src, 1_dst⟩` (or the adjoint) for sorted atom-id sets. The zero
    /// diagonal of the matrix makes overlapping sets need no correction.
    pub fn pair(&self, src: &[u32], dst: &[u32], transpose: bool) -> R {
        let (rows, cols) = if transpose { (src, dst) } else { (dst, src) };
        let mut acc = R::zero();
        for (r0, r1) in runs(rows) {
            for (c0, c1) in runs(cols) {
                acc = acc + self.rect(r0 as usize, r1 as usize, c0 as usize, c1 as usize);
            }
        }
        acc
    }
}

/// Maximal runs of consecutive ids, as half-open `(start, end)`.
fn runs(ids: &[u32]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let start = ids[i];
        let mut end = start + 1;
        i += 1;
        while i < ids.len() && ids[i] == end {
            end += 1;
            i += 1;
        }
        out.push((start, end));
    }
    out
}

fn set_minus(a: &[u32], b: &[u32]) -> Vec<u32> {
    a.iter().copied().filter(|x| !b.contains(x)).collect()
}

fn set_and(a: &[u32], b: &[u32]) -> Vec<u32> {
    a.iter().copied().filter(|x| b.contains(x)).collect()
}

/// Perturbation to good cubes: `f = ⟨f̃⟩_top 1 + Σ_{Q good} Δ_Q f̃`.
/// The difference `f̃ - f` is exactly the bad-cube projection.
pub fn perturb<R: Real>(
    f_tilde: &SupportFunction<R>,
    index: &GridIndex,
    ctx: &GoodnessContext,
) -> Result<(SupportFunction<R>, PerturbStats)> {
    let exp = expand(f_tilde, index)?;
    let mut out = SupportFunction::constant(index.measure.len(), exp.top_avg.clone());
    let mut stats = PerturbStats::default();
    for d in exp.deltas.values() {
        if ctx.is_good(&d.cube) {
            stats.good_active += 1;
            out = out.add(&d.to_support(index));
        } else {
            stats.bad_active += 1;
        }
    }
    Ok((out, stats))
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct PerturbStats {
    pub good_active: usize,
    pub bad_active: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PairClass {
    Inside,
    Separated,
    Nearby,
}

/// Classify a good pair with `ℓ(small) ≤ ℓ(big)` into exactly one class.
/// Goodness of the small cube is what makes this a partition; a pair
/// matching zero or two classes is an invariant failure.
pub fn classify_pair(big: &Cube, small: &Cube, r: u32) -> Result<PairClass> {
    debug_assert!(small.level <= big.level);
    let dist = small.as_box().dist(&big.as_box());
    let inside = small.as_box().subset_of(&big.as_box())
        && small.level + (r as i32) < big.level;
    let separated = small.side() <= dist;
    let nearby = small.level + (r as i32) >= big.level && dist < small.side();
    match (inside, separated, nearby) {
        (true, false, false) => Ok(PairClass::Inside),
        (false, true, false) => Ok(PairClass::Separated),
        (false, false, true) => Ok(PairClass::Nearby),
        _ => Err(CzError::Invariant(format!(
            "pair matches {} classes: big level {} small level {} dist {}",
            inside as u8 + separated as u8 + nearby as u8,
            big.level,
            small.level,
            dist.to_f64()
        ))),
    }
}

/// One classified pair term `⟨T Δ_big f, Δ_small g⟩`.
#[derive(Clone, Debug)]
pub struct PairTerm<R: Real> {
    pub big: Cube,
    pub small: Cube,
    pub class: PairClass,
    pub value: R,
    /// level gap `t` with `2^t ℓ(small) = ℓ(big)`
    pub t: u32,
}

/// One triangle of the pair sum: `ℓ(small) ≤ ℓ(big)` with the stated
/// operator side. The mirror triangle swaps grids and transposes `T`.
pub struct TriangleLedger<R: Real> {
    pub label: String,
    pub transpose: bool,
    /// index (0/1) of the big-side grid/function/tree
    pub big_side: usize,
    pub terms: Vec<PairTerm<R>>,
    pub b_inside: R,
    pub b_separated: R,
    pub b_nearby: R,
    pub inside_split: Option<InsideSplit<R>>,
}

impl<R: Real> TriangleLedger<R> {
    pub fn class_total(&self, class: PairClass) -> R {
        self.terms
            .iter()
            .filter(|t| t.class == class)
            .fold(R::zero(), |acc, t| acc + t.value.clone())
    }
}

/// The full form ledger: direct value, the two expansion terms, both
/// triangles, and the reconstruction residual.
pub struct FormLedger<R: Real> {
    pub direct: R,
    pub e_term1: R,
    pub e_term2: R,
    pub triangles: [TriangleLedger<R>; 2],
    pub residual_rel: f64,
    pub scale: f64,
}

impl<R: Real> FormLedger<R> {
    pub fn pair_total(&self) -> R {
        let mut acc = R::zero();
        for tri in &self.triangles {
            for t in &tri.terms {
                acc = acc + t.value.clone();
            }
        }
        acc
    }

    pub fn reconstruction_exact(&self) -> bool {
        let total = self.e_term1.clone() + self.e_term2.clone() + self.pair_total();
        total == self.direct
    }
}

/// Everything `expand_form` needs about one side of the form.
pub struct Side<'a, R: Real> {
    pub f: &'a SupportFunction<R>,
    pub exp: &'a MartingaleExpansion<R>,
    pub index: &'a GridIndex,
}

/// Compute `⟨T f₁, f₂⟩` directly and as the sum of all ledger terms.
///
/// The expansion splits off the two top terms and enumerates good pairs only
/// (differences vanish on bad cubes by construction of the perturbed
/// functions); the triangle with `ℓP ≥ ℓQ` takes the operator as given and
/// the mirror strict triangle exchanges roles through `T*`.
pub fn expand_form<R: Real>(
    op: &OperatorMatrix<R>,
    engine: &PairingEngine<R>,
    sides: [&Side<'_, R>; 2],
    ctx: &GoodnessContext,
) -> Result<FormLedger<R>> {
    let m = &op.measure;
    let n = m.len();
    let all: Vec<u32> = (0..n as u32).collect();
    let f1 = sides[0].f;
    let f2 = sides[1].f;
    let direct = op.apply(f1).inner(f2, m);
    // ⟨T E_top f₁, f₂⟩
    let t_one = op.t1_of_set(&all, false);
    let e_term1 = t_one.inner(f2, m).clone() * sides[0].exp.top_avg.clone();
    // ⟨T (f₁ - E_top f₁), E_top f₂⟩
    let centered =
        f1.sub(&SupportFunction::constant(n, sides[0].exp.top_avg.clone()));
    let e_term2 = op.apply(&centered).integral_over(&all, m) * sides[1].exp.top_avg.clone();

    let mut triangles = Vec::with_capacity(2);
    for (label, transpose, big_side) in
        [("lsmall<=lbig", false, 0usize), ("mirror-strict", true, 1usize)]
    {
        let small_side = 1 - big_side;
        let big_exp = sides[big_side].exp;
        let small_exp = sides[small_side].exp;
        let big_index = sides[big_side].index;
        let small_index = sides[small_side].index;
        let mut terms = Vec::new();
        for bd in big_exp.deltas.values() {
            // exact-mode perturbation kills bad-cube differences identically;
            // float mode leaves rounding residue there, which belongs to the
            // reconstruction residual rather than to a pair term
            if !good_or_noise(ctx, bd)? {
                continue;
            }
            let big_children = big_index.grid.children(&bd.cube)?;
            for sd in small_exp.deltas.values() {
                if !good_or_noise(ctx, sd)? {
                    continue;
                }
                let ok_size = if transpose {
                    sd.cube.level < bd.cube.level
                } else {
                    sd.cube.level <= bd.cube.level
                };
                if !ok_size {
                    continue;
                }
                let class = classify_pair(&bd.cube, &sd.cube, ctx.r)?;
                let small_children = small_index.grid.children(&sd.cube)?;
                let mut value = R::zero();
                for (bslot, bc) in big_children.iter().enumerate() {
                    if bd.child_values[bslot].is_zero() {
                        continue;
                    }
                    let src = big_index.atoms_in(bc);
                    if src.is_empty() {
                        continue;
                    }
                    for (sslot, sc) in small_children.iter().enumerate() {
                        if sd.child_values[sslot].is_zero() {
                            continue;
                        }
                        let dst = small_index.atoms_in(sc);
                        if dst.is_empty() {
                            continue;
                        }
                        value = value
                            + bd.child_values[bslot].clone()
                                * sd.child_values[sslot].clone()
                                * engine.pair(src, dst, transpose);
                    }
                }
                terms.push(PairTerm {
                    big: bd.cube.clone(),
                    small: sd.cube.clone(),
                    class,
                    value,
                    t: (bd.cube.level - sd.cube.level) as u32,
                });
            }
        }
        let mut tri = TriangleLedger {
            label: label.into(),
            transpose,
            big_side,
            terms,
            b_inside: R::zero(),
            b_separated: R::zero(),
            b_nearby: R::zero(),
            inside_split: None,
        };
        tri.b_inside = tri.class_total(PairClass::Inside);
        tri.b_separated = tri.class_total(PairClass::Separated);
        tri.b_nearby = tri.class_total(PairClass::Nearby);
        triangles.push(tri);
    }
    let t2 = triangles.pop().expect("two triangles");
    let t1 = triangles.pop().expect("two triangles");
    let mut ledger = FormLedger {
        direct,
        e_term1,
        e_term2,
        triangles: [t1, t2],
        residual_rel: 0.0,
        scale: 0.0,
    };
    let total = ledger.e_term1.clone() + ledger.e_term2.clone() + ledger.pair_total();
    let resid = (total - ledger.direct.clone()).to_f64().abs();
    let scale = ledger
        .direct
        .to_f64()
        .abs()
        .max(ledger.e_term1.to_f64().abs())
        .max(ledger.e_term2.to_f64().abs())
        .max(1e-30);
    ledger.residual_rel = resid / scale;
    ledger.scale = scale;
    if R::EXACT && !ledger.reconstruction_exact() {
        return Err(CzError::Invariant(format!(
            "exact-mode ledger reconstruction failed, residual {resid}"
        )));
    }
    if ledger.residual_rel > 1e-9 {
        return Err(CzError::Invariant(format!(
            "ledger reconstruction residual {} too large",
            ledger.residual_rel
        )));
    }
    Ok(ledger)
}

/// Active good cube, or float-mode noise on a bad cube (which must stay at
/// rounding scale).
fn good_or_noise<R: Real>(
    ctx: &GoodnessContext,
    d: &crate::martingale::DeltaFn<R>,
) -> Result<bool> {
    if ctx.is_good(&d.cube) {
        return Ok(true);
    }
    let worst = d
        .child_values
        .iter()
        .map(|v| v.to_f64().abs())
        .fold(0.0, f64::max);
    if R::EXACT || worst > 1e-10 {
        return Err(CzError::Invariant(format!(
            "difference of magnitude {worst} survives on a bad cube"
        )));
    }
    Ok(false)
}

/// Per-pair data of the inside split, kept for the regrouping and the decay
/// tables.
pub struct InsidePairDetail<R: Real> {
    pub big: Cube,
    pub small: Cube,
    /// child of `big` containing `small`
    pub pq: Cube,
    /// stopping node of `pq` in the big-side tree
    pub stop_node: usize,
    pub avg_delta: R,
    pub para: R,
    pub stop: R,
    pub error: R,
    pub t: u32,
}

pub struct InsideSplit<R: Real> {
    pub b_para: R,
    pub b_stop: R,
    pub b_error: R,
    pub details: Vec<InsidePairDetail<R>>,
    pub pointwise_checked: usize,
}

/// Split `B_inside = B^para - B^stop + B^error` from the pointwise identity
/// `Δ_P f = ⟨Δ_P f⟩_{P_Q} 1_{π_S P_Q} - ⟨Δ_P f⟩_{P_Q} 1_{π_S P_Q ∖ P_Q}
///  + Δ_P f · 1_{P ∖ P_Q}`, verified atomwise per pair (on `P ∖ P_Q` only
/// when `μ(P_Q) = 0`, matching the average convention).
pub fn inside_split<R: Real>(
    tri: &TriangleLedger<R>,
    engine: &PairingEngine<R>,
    big_exp: &MartingaleExpansion<R>,
    tree_big: &crate::corona::StoppingTree<R>,
    big_index: &GridIndex,
    small_exp: &MartingaleExpansion<R>,
    small_index: &GridIndex,
) -> Result<InsideSplit<R>> {
    let transpose = tri.transpose;
    let mut b_para = R::zero();
    let mut b_stop = R::zero();
    let mut b_error = R::zero();
    let mut details = Vec::new();
    let mut pointwise_checked = 0usize;
    for term in tri.terms.iter().filter(|t| t.class == PairClass::Inside) {
        let bd = big_exp.deltas.get(&term.big.key()).expect("active big cube");
        let sd = small_exp.deltas.get(&term.small.key()).expect("active small cube");
        // P_Q: the child of big containing small; exists by goodness
        let pq_idx = big_index
            .grid
            .point_index(&term.small.anchor, term.big.level - 1);
        let pq = big_index.grid.cube_at(term.big.level - 1, pq_idx)?;
        if !term.small.as_box().subset_of(&pq.as_box()) {
            return Err(CzError::Invariant(
                "small cube straddles a child of its inside partner".into(),
            ));
        }
        let pq_slot = big_index.grid.child_slot(&pq) as usize;
        let stop_node = match tree_big.stopping_parent_box(&pq.as_box(), big_index) {
            crate::corona::StopRef::Node(s) => s,
            crate::corona::StopRef::WholeSpace => {
                return Err(CzError::Invariant(
                    "inside pair child escapes every stopping cube".into(),
                ))
            }
        };
        let s_cube = &tree_big.nodes[stop_node].cube;
        let s_atoms = big_index.atoms_in(s_cube);
        let pq_atoms = big_index.atoms_in(&pq);
        let avg_delta = if big_index.measure.mass_of(pq_atoms).is_zero() {
            R::zero()
        } else {
            bd.child_values[pq_slot].clone()
        };
        // pair the three pieces against Δ_small
        let small_children = small_index.grid.children(&term.small)?;
        let pair_against_small = |src: &[u32]| -> R {
            let mut acc = R::zero();
            if src.is_empty() {
                return acc;
            }
            for (sslot, sc) in small_children.iter().enumerate() {
                if sd.child_values[sslot].is_zero() {
                    continue;
                }
                let dst = small_index.atoms_in(sc);
                if dst.is_empty() {
                    continue;
                }
                acc = acc
                    + sd.child_values[sslot].clone() * engine.pair(src, dst, transpose);
            }
            acc
        };
        let para = avg_delta.clone() * pair_against_small(s_atoms);
        let s_minus_pq = set_minus(s_atoms, pq_atoms);
        let stop = avg_delta.clone() * pair_against_small(&s_minus_pq);
        let mut error = R::zero();
        let big_children = big_index.grid.children(&term.big)?;
        for (bslot, bc) in big_children.iter().enumerate() {
            if bslot == pq_slot || bd.child_values[bslot].is_zero() {
                continue;
            }
            error = error
                + bd.child_values[bslot].clone() * pair_against_small(big_index.atoms_in(bc));
        }
        // per-pair identity
        let combo = para.clone() - stop.clone() + error.clone();
        check_close(&combo, &term.value, "inside split per-pair")?;
        // pointwise identity of the Δ_P decomposition on atoms of S ∪ P;
        // when μ(P_Q) = 0 the cube holds no atoms, so the identity is
        // automatically checked on P ∖ P_Q only
        for &a in s_atoms.iter().chain(big_index.atoms_in(&term.big)) {
            let in_s = s_atoms.contains(&a);
            let in_pq = pq_atoms.contains(&a);
            let lhs = delta_value_at(bd, big_index, a);
            let mut rhs = R::zero();
            if in_s {
                rhs = rhs + avg_delta.clone();
            }
            if in_s && !in_pq {
                rhs = rhs - avg_delta.clone();
            }
            if !in_pq && big_index.atoms_in(&term.big).contains(&a) {
                rhs = rhs + delta_value_at(bd, big_index, a);
            }
            check_close(&lhs, &rhs, "inside pointwise identity")?;
            pointwise_checked += 1;
        }
        b_para = b_para + para.clone();
        b_stop = b_stop + stop.clone();
        b_error = b_error + error.clone();
        details.push(InsidePairDetail {
            big: term.big.clone(),
            small: term.small.clone(),
            pq,
            stop_node,
            avg_delta,
            para,
            stop,
            error,
            t: term.t,
        });
    }
    let combo = b_para.clone() - b_stop.clone() + b_error.clone();
    check_close(&combo, &tri.b_inside, "inside split total")?;
    Ok(InsideSplit { b_para, b_stop, b_error, details, pointwise_checked })
}

fn delta_value_at<R: Real>(
    d: &crate::martingale::DeltaFn<R>,
    index: &GridIndex,
    atom: u32,
) -> R {
    let children = index.grid.children(&d.cube).expect("in range");
    for (slot, c) in children.iter().enumerate() {
        if index.atoms_in(c).contains(&atom) {
            return d.child_values[slot].clone();
        }
    }
    R::zero()
}

fn check_close<R: Real>(a: &R, b: &R, what: &str) -> Result<()> {
    if R::EXACT {
        if a == b {
            return Ok(());
        }
        return Err(CzError::Invariant(format!(
            "{what}: exact mismatch {} vs {}",
            a.to_f64(),
            b.to_f64()
        )));
    }
    let scale = a.to_f64().abs().max(b.to_f64().abs()).max(1e-30);
    if (a.to_f64() - b.to_f64()).abs() <= 1e-10 * scale.max(1.0) {
        Ok(())
    } else {
        Err(CzError::Invariant(format!(
            "{what}: {} vs {} (rel {})",
            a.to_f64(),
            b.to_f64(),
            (a.to_f64() - b.to_f64()).abs() / scale
        )))
    }
}

/// The coefficient `ε_{Q,S}` by its defining sum and independently by the
/// telescoping identity, with the `|ε| ≤ 8` bound.
pub struct EpsilonCheck<R: Real> {
    pub value: R,
    pub eps: R,
    pub telescoped: R,
    pub sigma_zero: bool,
}

pub fn epsilon_coefficient<R: Real>(
    tree_big: &crate::corona::StoppingTree<R>,
    f_big: &SupportFunction<R>,
    big_index: &GridIndex,
    ctx: &GoodnessContext,
    small: &Cube,
    stop_node: usize,
) -> Result<EpsilonCheck<R>> {
    let grid = &big_index.grid;
    let m = &big_index.measure;
    // the chain of big-grid cubes strictly containing `small` with
    // ℓP > 2^r ℓ(small); goodness of `small` keeps it from straddling
    let mut chain: Vec<Cube> = Vec::new();
    let lo = small.level + ctx.r as i32; // level of P_Q = P.level - 1
    for lv in lo..=grid.level_max() {
        let c = grid.cube_at(lv, grid.point_index(&small.anchor, lv))?;
        if !small.as_box().subset_of(&c.as_box()) {
            return Err(CzError::Invariant(
                "good small cube straddles an ancestor".into(),
            ));
        }
        chain.push(c);
    }
    // defining sum over admissible good P
    let mut sum = R::zero();
    let mut telescope_members: Vec<usize> = Vec::new();
    for i in 1..chain.len() {
        let p = &chain[i];
        let pq = &chain[i - 1];
        if !ctx.is_good(p) {
            continue;
        }
        match tree_big.stopping_parent_box(&pq.as_box(), big_index) {
            crate::corona::StopRef::Node(s) if s == stop_node => {}
            _ => continue,
        }
        let pq_atoms = big_index.atoms_in(pq);
        if m.mass_of(pq_atoms).is_zero() {
            continue; // zero average by convention; also outside telescoping
        }
        telescope_members.push(i);
        let term = average(f_big, pq, big_index) - average(f_big, p, big_index);
        sum = sum + term;
    }
    // telescoping route via the minimal and maximal members
    let telescoped = if telescope_members.is_empty() {
        R::zero()
    } else {
        let &imin = telescope_members.first().expect("nonempty");
        let &imax = telescope_members.last().expect("nonempty");
        let pq_min = &chain[imin - 1];
        let p_max = &chain[imax];
        average(f_big, pq_min, big_index) - average(f_big, p_max, big_index)
    };
    check_close(&sum, &telescoped, "epsilon telescoping")?;
    let sigma = &tree_big.nodes[stop_node].sigma;
    let sigma_zero = sigma.is_zero();
    let eps = if sigma_zero {
        R::zero()
    } else {
        sum.clone() / sigma.clone()
    };
    if eps.abs() > R::from_i64(8) {
        return Err(CzError::Invariant(format!(
            "|ε| = {} exceeds 8",
            eps.to_f64().abs()
        )));
    }
    Ok(EpsilonCheck { value: sum, eps, telescoped, sigma_zero })
}

/// The full regrouping of the paraproduct sum over stopping cubes `S`,
/// layer families and stopping descendants, with the mean-zero constants
/// `τ` subtracted — an identity, recomputed literally and compared against
/// the direct `B^para`.
pub struct RegroupReport<R: Real> {
    pub direct_para: R,
    pub regrouped: R,
    pub buckets_not_subset: usize,
    pub buckets_subset: usize,
    pub eps_count: usize,
    pub max_abs_eps: f64,
    /// brackets whose τ constant was nonzero (deep stopping chains)
    pub tau_nonzero: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn paraproduct_regroup<R: Real>(
    split: &InsideSplit<R>,
    op: &OperatorMatrix<R>,
    tree_big: &crate::corona::StoppingTree<R>,
    tree_small: &crate::corona::StoppingTree<R>,
    f_big: &SupportFunction<R>,
    big_index: &GridIndex,
    small_index: &GridIndex,
    small_exp: &MartingaleExpansion<R>,
    ctx: &GoodnessContext,
    transpose: bool,
) -> Result<RegroupReport<R>> {
    let r = ctx.r;
    let m = &op.measure;
    // group the distinct small cubes by stopping node S
    let mut by_s: BTreeMap<usize, Vec<CubeKey>> = BTreeMap::new();
    for d in &split.details {
        let v = by_s.entry(d.stop_node).or_default();
        if !v.contains(&d.small.key()) {
            v.push(d.small.key());
        }
    }
    let mut regrouped = R::zero();
    let mut buckets_not_subset = 0;
    let mut buckets_subset = 0;
    let mut eps_count = 0;
    let mut max_abs_eps = 0.0f64;
    let mut tau_nonzero = 0usize;
    for (&s_node, smalls) in &by_s {
        let s_cube = tree_big.nodes[s_node].cube.clone();
        let s_atoms: Vec<u32> = big_index.atoms_in(&s_cube).to_vec();
        let t1_s = op.t1_of_set(&s_atoms, transpose);
        let mut bucket_sum = R::zero();
        for qkey in smalls {
            let sd = small_exp.deltas.get(qkey).expect("active small");
            let q = sd.cube.clone();
            let ec = epsilon_coefficient(tree_big, f_big, big_index, ctx, &q, s_node)?;
            eps_count += 1;
            max_abs_eps = max_abs_eps.max(ec.eps.to_f64().abs());
            if ec.value.is_zero() {
                continue;
            }
            // R = stopping parent of Q in the small-side tree
            let r_node = match tree_small.stopping_parent_box(&q.as_box(), small_index) {
                crate::corona::StopRef::Node(n) => n,
                crate::corona::StopRef::WholeSpace => {
                    return Err(CzError::Invariant(
                        "good small cube escapes its stopping tree".into(),
                    ))
                }
            };
            let r_cube = tree_small.nodes[r_node].cube.clone();
            let r_in_s = r_cube.as_box().subset_of(&s_cube.as_box());
            // mask and τ per branch
            let (mask, tau): (Vec<u32>, R) = if !r_in_s {
                buckets_not_subset += 1;
                // S' = π_{S_big} Q, a stopping descendant of S at depth t
                let sp = match tree_big.stopping_parent_box(&q.as_box(), big_index) {
                    crate::corona::StopRef::Node(n) => n,
                    crate::corona::StopRef::WholeSpace => {
                        return Err(CzError::Invariant("Q escapes the big tree".into()))
                    }
                };
                let t = tree_big
                    .depth_between(s_node, sp)
                    .ok_or_else(|| CzError::Invariant("π(Q) not below S".into()))?;
                let sp_cube = tree_big.nodes[sp].cube.clone();
                let mask = set_and(
                    small_index.atoms_in(&r_cube),
                    big_index.atoms_in(&sp_cube),
                );
                let tau = if t <= 2 * r + 1 {
                    R::zero()
                } else {
                    let anc = match tree_big.ancestor(sp, t / 2) {
                        crate::corona::StopRef::Node(n) => n,
                        crate::corona::StopRef::WholeSpace => {
                            return Err(CzError::Invariant("τ ancestor missing".into()))
                        }
                    };
                    let anc_atoms = big_index.atoms_in(&tree_big.nodes[anc].cube);
                    let diff = set_minus(&s_atoms, anc_atoms);
                    op.t1_at_point(&diff, &sp_cube.midpoint(), transpose)
                };
                (mask, tau)
            } else {
                buckets_subset += 1;
                // branch over R' = π_{S_small} Q with S' = π_{S_big} R'
                let rp = r_node;
                let rp_cube = r_cube.clone();
                let sp = match tree_big.stopping_parent_box(&rp_cube.as_box(), big_index) {
                    crate::corona::StopRef::Node(n) => n,
                    crate::corona::StopRef::WholeSpace => {
                        return Err(CzError::Invariant("R' escapes the big tree".into()))
                    }
                };
                let t = tree_big
                    .depth_between(s_node, sp)
                    .ok_or_else(|| CzError::Invariant("π(R') not below S".into()))?;
                // maximal small-tree ancestor of R' with the same big-side parent
                let mut rmax = rp;
                while let Some(par) = tree_small.nodes[rmax].parent {
                    let par_cube = &tree_small.nodes[par].cube;
                    match tree_big.stopping_parent_box(&par_cube.as_box(), big_index) {
                        crate::corona::StopRef::Node(nn) if nn == sp => rmax = par,
                        _ => break,
                    }
                }
                let k = tree_small.depth_between(rmax, rp).expect("ancestor");
                let mask = small_index.atoms_in(&rp_cube).to_vec();
                let tau = if t <= 2 * r + 1 && k <= 2 * r + 1 {
                    R::zero()
                } else if k >= 2 * (r + 1) {
                    let anc = match tree_small.ancestor(rp, k / 2) {
                        crate::corona::StopRef::Node(n) => n,
                        crate::corona::StopRef::WholeSpace => {
                            return Err(CzError::Invariant("τ ancestor missing".into()))
                        }
                    };
                    let anc_atoms = small_index.atoms_in(&tree_small.nodes[anc].cube);
                    let diff = set_minus(&s_atoms, anc_atoms);
                    op.t1_at_point(&diff, &rp_cube.midpoint(), transpose)
                } else {
                    let anc = match tree_big.ancestor(sp, t / 2) {
                        crate::corona::StopRef::Node(n) => n,
                        crate::corona::StopRef::WholeSpace => {
                            return Err(CzError::Invariant("τ ancestor missing".into()))
                        }
                    };
                    let anc_atoms = big_index.atoms_in(&tree_big.nodes[anc].cube);
                    let diff = set_minus(&s_atoms, anc_atoms);
                    op.t1_at_point(&diff, &tree_big.nodes[sp].cube.midpoint(), transpose)
                };
                (mask, tau)
            };
            if !tau.is_zero() {
                tau_nonzero += 1;
            }
            // the literal bracket ⟨1_mask (T1_S - τ), ε Δ_Q f⟩; the Δ support
            // must sit inside the mask, and the τ part must die by mean zero
            let children = small_index.grid.children(&q)?;
            let mut bracket = R::zero();
            let mut tau_integral = R::zero();
            for (slot, c) in children.iter().enumerate() {
                if sd.child_values[slot].is_zero() {
                    continue;
                }
                for &a in small_index.atoms_in(c) {
                    if !mask.contains(&a) {
                        return Err(CzError::Invariant(
                            "Δ_Q support escapes the regroup mask".into(),
                        ));
                    }
                    let w = R::from_dyadic(&m.weight(a as usize));
                    bracket = bracket
                        + (t1_s.values[a as usize].clone() - tau.clone())
                            * sd.child_values[slot].clone()
                            * w.clone();
                    tau_integral = tau_integral + sd.child_values[slot].clone() * w;
                }
            }
            check_close(&tau_integral, &R::zero(), "τ mean-zero bracket")?;
            // ε σ(S) = value, so the σ-weighted ε-bracket is value · bracket
            bracket_add(&mut bucket_sum, bracket, &ec.value);
        }
        regrouped = regrouped + bucket_sum;
    }
    check_close(&regrouped, &split.b_para, "paraproduct regroup")?;
    Ok(RegroupReport {
        direct_para: split.b_para.clone(),
        regrouped,
        buckets_not_subset,
        buckets_subset,
        eps_count,
        max_abs_eps,
        tau_nonzero,
    })
}

fn bracket_add<R: Real>(acc: &mut R, bracket: R, eps: &R) {
    *acc = acc.clone() + bracket * eps.clone();
}

/// The six boundary/separated/core sets of a nearby pair of children, the
/// third-grid layer adaptation, the ε-collar split, and the five exact
/// identities tying them together.
pub struct SurgerySets<R: Real> {
    pub q_child: Cube,
    pub p_child: Cube,
    pub q_boundary: Vec<u32>,
    pub q_sep: Vec<u32>,
    pub q_delta: Vec<u32>,
    pub p_boundary: Vec<u32>,
    pub p_sep: Vec<u32>,
    pub p_delta: Vec<u32>,
    pub q_delta_layer: Vec<u32>,
    pub p_delta_layer: Vec<u32>,
    pub q_delta_bd: Vec<u32>,
    pub p_delta_bd: Vec<u32>,
    pub q_delta_eps: Vec<u32>,
    pub q_delta_tilde: Vec<u32>,
    pub p_delta_eps: Vec<u32>,
    pub p_delta_tilde: Vec<u32>,
    pub layer_level: i32,
    pub m_terms: [R; 5],
    pub alpha_terms: [R; 3],
    pub beta_terms: [R; 3],
    pub matrix_coefficient: R,
}

/// The collar `δ^t_B = (1+t)B ∖ (1-t)B` with closed dilates and rational
/// dilation factor `t = num/den`; bounds precomputed once per box.
pub struct CollarBounds {
    outer: Vec<(BigRational, BigRational)>,
    inner: Vec<(BigRational, BigRational)>,
}

impl CollarBounds {
    pub fn new(b: &crate::dyadic::BoxRegion, t: (i64, i64)) -> Self {
        CollarBounds {
            outer: b.dilate_bounds(t.1 + t.0, t.1),
            inner: b.dilate_bounds(t.1 - t.0, t.1),
        }
    }

    pub fn contains(&self, pos: &[Dyadic]) -> bool {
        let in_outer = pos.iter().enumerate().all(|(d, v)| {
            let vq = v.to_rational();
            vq >= self.outer[d].0 && vq <= self.outer[d].1
        });
        if !in_outer {
            return false;
        }
        let in_inner = pos.iter().enumerate().all(|(d, v)| {
            let vq = v.to_rational();
            vq >= self.inner[d].0 && vq <= self.inner[d].1
        });
        !in_inner
    }
}

pub fn collar_atoms(
    m: &crate::measure::Measure,
    b: &crate::dyadic::BoxRegion,
    t: (i64, i64),
) -> Vec<u32> {
    let c = CollarBounds::new(b, t);
    (0..m.len() as u32)
        .filter(|&a| c.contains(m.pos(a as usize)))
        .collect()
}

/// Surgery on one nearby pair `(P, Q)` and child slots `(i, j)`; `upsilon`
/// and `eps_collar` are rationals in `(0,1)` as `(num, den)`; the layer comes
/// from the supplied third grid.
#[allow(clippy::too_many_arguments)]
pub fn surgery<R: Real>(
    op: &OperatorMatrix<R>,
    engine: &PairingEngine<R>,
    index_big: &GridIndex,
    index_small: &GridIndex,
    p: &Cube,
    q: &Cube,
    i_slot: usize,
    j_slot: usize,
    upsilon: (i64, i64),
    eps_collar: (i64, i64),
    grid3: &DyadicGrid,
    transpose: bool,
) -> Result<SurgerySets<R>> {
    assert!(0 < upsilon.0 && upsilon.0 < upsilon.1, "υ ∈ (0,1)");
    assert!(0 < eps_collar.0 && eps_collar.0 < eps_collar.1, "ε ∈ (0,1)");
    let m = &op.measure;
    let q_child = index_small.grid.children(q)?[i_slot].clone();
    let p_child = index_big.grid.children(p)?[j_slot].clone();
    let qb = q_child.as_box();
    let pb = p_child.as_box();
    let q_atoms = index_small.atoms_in(&q_child).to_vec();
    let p_atoms = index_big.atoms_in(&p_child).to_vec();
    let qp: Vec<u32> = set_and(&q_atoms, &p_atoms);

    // e.basic_one sets
    let pb_collar = CollarBounds::new(&pb, upsilon);
    let qb_collar = CollarBounds::new(&qb, upsilon);
    let q_boundary: Vec<u32> = q_atoms
        .iter()
        .copied()
        .filter(|&a| pb_collar.contains(m.pos(a as usize)))
        .collect();
    let q_sep = set_minus(&set_minus(&q_atoms, &q_boundary), &qp);
    let q_delta = set_minus(&qp, &q_boundary);
    let p_boundary: Vec<u32> = p_atoms
        .iter()
        .copied()
        .filter(|&a| qb_collar.contains(m.pos(a as usize)))
        .collect();
    let p_sep = set_minus(&set_minus(&p_atoms, &p_boundary), &qp);
    let p_delta = set_minus(&qp, &p_boundary);

    // M-split of ⟨T 1_{P_j}, 1_{Q_i}⟩
    let m1 = engine.pair(&p_sep, &q_atoms, transpose);
    let m2 = engine.pair(&p_boundary, &q_atoms, transpose);
    let m3 = engine.pair(&p_delta, &q_delta, transpose);
    let m4 = engine.pair(&p_delta, &q_boundary, transpose);
    let m5 = engine.pair(&p_delta, &q_sep, transpose);
    let matrix_coefficient = engine.pair(&p_atoms, &q_atoms, transpose);
    let m_total = m1.clone() + m2.clone() + m3.clone() + m4.clone() + m5.clone();
    check_close(&m_total, &matrix_coefficient, "surgery M-split")?;

    // third-grid layer of side s = 2^{j(υ)} ℓQ_i with υ/64 ≤ 2^{j(υ)} < υ/32
    let j_upsilon = {
        let u = BigRational::new(BigInt::from(upsilon.0), BigInt::from(upsilon.1));
        let mut j = -6i32;
        loop {
            let pow = if j >= 0 {
                BigRational::from_integer(BigInt::from(1) << j as usize)
            } else {
                BigRational::new(BigInt::from(1), BigInt::from(1) << (-j) as usize)
            };
            let lo = u.clone() / BigRational::from_integer(BigInt::from(64));
            let hi = u.clone() / BigRational::from_integer(BigInt::from(32));
            if pow >= lo && pow < hi {
                break j;
            }
            if pow < lo {
                j += 1;
            } else {
                j -= 1;
            }
        }
    };
    let layer_level = j_upsilon + q_child.level;
    grid3.check_level(layer_level).map_err(|_| {
        CzError::Contract(format!(
            "third grid range misses the layer level {layer_level}"
        ))
    })?;

    // adaptation per layer cube: fill cells meeting both Δ sets
    let mut cell_of = BTreeMap::new();
    for a in 0..m.len() as u32 {
        cell_of.insert(a, grid3.point_index(m.pos(a as usize), layer_level));
    }
    let mut cells: BTreeMap<Vec<i64>, Vec<u32>> = BTreeMap::new();
    for (a, c) in &cell_of {
        cells.entry(c.clone()).or_default().push(*a);
    }
    let mut q_delta_bd: Vec<u32> = Vec::new();
    let mut p_delta_bd: Vec<u32> = Vec::new();
    for atoms in cells.values() {
        let has_q = atoms.iter().any(|a| q_delta.contains(a));
        let has_p = atoms.iter().any(|a| p_delta.contains(a));
        if has_q && has_p {
            for &a in atoms {
                // every atom of a filled cell must lie in Q_i ∩ P_j
                if !qp.contains(&a) {
                    return Err(CzError::Invariant(
                        "layer cell meets both core sets but leaks outside Q_i ∩ P_j"
                            .into(),
                    ));
                }
                if !q_delta.contains(&a) && !q_delta_bd.contains(&a) {
                    q_delta_bd.push(a);
                }
                if !p_delta.contains(&a) && !p_delta_bd.contains(&a) {
                    p_delta_bd.push(a);
                }
            }
        }
    }
    q_delta_bd.sort_unstable();
    p_delta_bd.sort_unstable();
    // enlargements must come from the allowed boundary pools, disjointly
    for &a in &q_delta_bd {
        if !(q_boundary.contains(&a) && p_atoms.contains(&a)) {
            return Err(CzError::Invariant("Δ^∂_{Q_i} escapes Q_{i,∂} ∩ P_j".into()));
        }
    }
    for &a in &p_delta_bd {
        if !(p_boundary.contains(&a) && q_atoms.contains(&a)) {
            return Err(CzError::Invariant("Δ^∂_{P_j} escapes P_{j,∂} ∩ Q_i".into()));
        }
    }
    let mut q_delta_layer = q_delta.clone();
    q_delta_layer.extend_from_slice(&q_delta_bd);
    q_delta_layer.sort_unstable();
    let mut p_delta_layer = p_delta.clone();
    p_delta_layer.extend_from_slice(&p_delta_bd);
    p_delta_layer.sort_unstable();
    // trichotomy per cell after adaptation
    for atoms in cells.values() {
        let ql: Vec<u32> = atoms.iter().copied().filter(|a| q_delta_layer.contains(a)).collect();
        let pl: Vec<u32> = atoms.iter().copied().filter(|a| p_delta_layer.contains(a)).collect();
        let full = ql.len() == atoms.len() && pl.len() == atoms.len();
        let one_empty = ql.is_empty() || pl.is_empty();
        if !(full || one_empty) {
            return Err(CzError::Invariant("layer trichotomy violated".into()));
        }
    }

    // α-split of M3 through the adapted sets
    let a1 = engine.pair(&p_delta_layer, &q_delta_layer, transpose);
    let a2 = -engine.pair(&p_delta_bd, &q_delta_layer, transpose);
    let a3 = -engine.pair(&p_delta, &q_delta_bd, transpose);
    let a_total = a1.clone() + a2.clone() + a3.clone();
    check_close(&a_total, &m3, "surgery α-split")?;

    // ε-collar split of α1: L_ε = ∪_G δ^ε_G, membership via the 3^n
    // neighboring cells of each atom; per-cell collar bounds are cached
    let mut cell_collars: BTreeMap<Vec<i64>, CollarBounds> = BTreeMap::new();
    let mut in_l_eps = |a: u32| -> bool {
        let base = cell_of[&a].clone();
        let dim = base.len();
        let mut offs = vec![0i64; dim];
        loop {
            let idx: Vec<i64> = base.iter().zip(&offs).map(|(b, o)| b + o).collect();
            let collar = cell_collars.entry(idx.clone()).or_insert_with(|| {
                let g = grid3.cube_at(layer_level, idx.clone()).expect("level checked");
                CollarBounds::new(&g.as_box(), eps_collar)
            });
            if collar.contains(m.pos(a as usize)) {
                return true;
            }
            // odometer over {-1,0,1}^n
            let mut d = 0;
            loop {
                if d == dim {
                    return false;
                }
                offs[d] += 1;
                if offs[d] <= 1 {
                    break;
                }
                offs[d] = -1;
                d += 1;
            }
        }
    };
    let q_delta_eps: Vec<u32> =
        q_delta_layer.iter().copied().filter(|&a| in_l_eps(a)).collect();
    let q_delta_tilde = set_minus(&q_delta_layer, &q_delta_eps);
    let p_delta_eps: Vec<u32> =
        p_delta_layer.iter().copied().filter(|&a| in_l_eps(a)).collect();
    let p_delta_tilde = set_minus(&p_delta_layer, &p_delta_eps);
    let b1 = engine.pair(&p_delta_eps, &q_delta_layer, transpose);
    let b2 = engine.pair(&p_delta_tilde, &q_delta_eps, transpose);
    let b3 = engine.pair(&p_delta_tilde, &q_delta_tilde, transpose);
    let b_total = b1.clone() + b2.clone() + b3.clone();
    check_close(&b_total, &a1, "surgery β-split")?;

    Ok(SurgerySets {
        q_child,
        p_child,
        q_boundary,
        q_sep,
        q_delta,
        p_boundary,
        p_sep,
        p_delta,
        q_delta_layer,
        p_delta_layer,
        q_delta_bd,
        p_delta_bd,
        q_delta_eps,
        q_delta_tilde,
        p_delta_eps,
        p_delta_tilde,
        layer_level,
        m_terms: [m1, m2, m3, m4, m5],
        alpha_terms: [a1, a2, a3],
        beta_terms: [b1, b2, b3],
        matrix_coefficient,
    })
}

/// Per-depth magnitudes of the stopping/error terms and per-(u,m)
/// magnitudes of the separated term, next to the decay envelopes
/// `2^{-tη(1-γ)}`, `2^{-tη/4}` and `2^{-η(m+u)/4}`. Envelope constants are
/// fitted by least squares on the log scale; nothing is asserted beyond
/// finiteness (no explicit constants exist to test against).
#[derive(Clone, Debug, Serialize, Default)]
pub struct DecayTable {
    pub stop_by_t: Vec<(u32, f64, usize, f64)>,
    pub error_by_t: Vec<(u32, f64, usize, f64)>,
    pub separated_by_um: Vec<(u32, u32, f64, usize, f64)>,
    /// least-squares slope of log2 |stop_t| against t
    pub stop_fitted_exponent: Option<f64>,
    pub error_fitted_exponent: Option<f64>,
}

pub fn decay_diagnostics<R: Real>(
    tri: &TriangleLedger<R>,
    split: Option<&InsideSplit<R>>,
    ctx: &GoodnessContext,
) -> DecayTable {
    let eta = crate::interval::rational_to_f64(&ctx.eta);
    let gamma = ctx.gamma.to_f64();
    let mut stop: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut error: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    if let Some(split) = split {
        for d in &split.details {
            let e = stop.entry(d.t).or_default();
            e.0 += d.stop.to_f64();
            e.1 += 1;
            let e = error.entry(d.t).or_default();
            e.0 += d.error.to_f64();
            e.1 += 1;
        }
    }
    let mut sep: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    for t in tri.terms.iter().filter(|t| t.class == PairClass::Separated) {
        let dd = long_distance(&t.small, &t.big).to_f64() / t.big.side().to_f64();
        let u = (dd.log2().ceil() as i64 - 1).max(0) as u32;
        let e = sep.entry((u, t.t)).or_default();
        e.0 += t.value.to_f64();
        e.1 += 1;
    }
    let fit = |rows: &BTreeMap<u32, (f64, usize)>| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|(_, (v, _))| v.abs() > 1e-300)
            .map(|(&t, (v, _))| (t as f64, v.abs().log2()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    };
    DecayTable {
        stop_by_t: stop
            .iter()
            .map(|(&t, &(v, c))| (t, v.abs(), c, (-(t as f64) * eta * (1.0 - gamma)).exp2()))
            .collect(),
        error_by_t: error
            .iter()
            .map(|(&t, &(v, c))| (t, v.abs(), c, (-(t as f64) * eta / 4.0).exp2()))
            .collect(),
        separated_by_um: sep
            .iter()
            .map(|(&(u, m), &(v, c))| {
                (u, m, v.abs(), c, (-eta * (m as f64 + u as f64) / 4.0).exp2())
            })
            .collect(),
        stop_fitted_exponent: fit(&stop),
        error_fitted_exponent: fit(&error),
    }
}

/// Exhaustive partition check over all good pairs (including zero-mass
/// cubes): every good pair with `ℓ(small) ≤ ℓ(big)` lands in exactly one
/// class.
pub struct PartitionReport {
    pub good_big: usize,
    pub good_small: usize,
    pub pairs: usize,
    pub violations: usize,
}

pub fn partition_check(
    ctx: &GoodnessContext,
    big_grid: &DyadicGrid,
    small_grid: &DyadicGrid,
    r: u32,
) -> PartitionReport {
    let enumerate_good = |grid: &DyadicGrid| -> Vec<Cube> {
        let mut out = Vec::new();
        let top = grid.top.clone().expect("grid over a measure");
        let mut stack = vec![top];
        while let Some(c) = stack.pop() {
            if ctx.is_good(&c) {
                out.push(c.clone());
            }
            if c.level > grid.level_min() {
                stack.extend(grid.children(&c).expect("in range"));
            }
        }
        out
    };
    let big_good = enumerate_good(big_grid);
    let small_good = enumerate_good(small_grid);
    let mut pairs = 0usize;
    let mut violations = 0usize;
    for b in &big_good {
        for s in &small_good {
            if s.level > b.level {
                continue;
            }
            pairs += 1;
            if classify_pair(b, s, r).is_err() {
                violations += 1;
            }
        }
    }
    PartitionReport {
        good_big: big_good.len(),
        good_small: small_good.len(),
        pairs,
        violations,
    }
}

/// Ledger export: JSON with per-class totals and an optional per-pair CSV.
#[derive(Serialize)]
pub struct LedgerSummary {
    pub direct: f64,
    pub e_term1: f64,
    pub e_term2: f64,
    pub residual_rel: f64,
    pub triangles: Vec<TriangleSummary>,
}

#[derive(Serialize)]
pub struct TriangleSummary {
    pub label: String,
    pub pairs: usize,
    pub b_inside: f64,
    pub b_separated: f64,
    pub b_nearby: f64,
    pub b_para: Option<f64>,
    pub b_stop: Option<f64>,
    pub b_error: Option<f64>,
}

pub fn ledger_summary<R: Real>(ledger: &FormLedger<R>) -> LedgerSummary {
    LedgerSummary {
        direct: ledger.direct.to_f64(),
        e_term1: ledger.e_term1.to_f64(),
        e_term2: ledger.e_term2.to_f64(),
        residual_rel: ledger.residual_rel,
        triangles: ledger
            .triangles
            .iter()
            .map(|t| TriangleSummary {
                label: t.label.clone(),
                pairs: t.terms.len(),
                b_inside: t.b_inside.to_f64(),
                b_separated: t.b_separated.to_f64(),
                b_nearby: t.b_nearby.to_f64(),
                b_para: t.inside_split.as_ref().map(|s| s.b_para.to_f64()),
                b_stop: t.inside_split.as_ref().map(|s| s.b_stop.to_f64()),
                b_error: t.inside_split.as_ref().map(|s| s.b_error.to_f64()),
            })
            .collect(),
    }
}

pub fn ledger_pairs_csv<R: Real>(ledger: &FormLedger<R>) -> String {
    let mut out = String::from("triangle,big_level,big_idx,small_level,small_idx,class,value\n");
    for tri in &ledger.triangles {
        for t in &tri.terms {
            let _ = writeln!(
                out,
                "{},{},{:?},{},{:?},{:?},{}",
                tri.label,
                t.big.level,
                t.big.idx,
                t.small.level,
                t.small.idx,
                t.class,
                t.value.to_f64()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::BoxRegion;
    use crate::grid::ShiftSequence;
    use crate::interval::ParamValue;
    use crate::lab::{build_instance, ExponentSpec, Instance, KernelSpec, MeasureSpec, Scenario};
    use crate::measure::{Atom, DominatingFunction, Measure};
    use crate::operator::Kernel;
    use num_rational::BigRational;
    use std::sync::Arc;

    #[test]
    fn runs_split() {
        assert_eq!(runs(&[1, 2, 3, 7, 9, 10]), vec![(1, 4), (7, 8), (9, 11)]);
        assert!(runs(&[]).is_empty());
    }

    fn free_cube(grid_id: u8, level: i32, idx: i64) -> Cube {
        let g = DyadicGrid::free(ShiftSequence::zero(grid_id, 1, -12, 4));
        g.cube_at(level, vec![idx]).unwrap()
    }

    #[test]
    fn classify_examples() {
        // Q ⊂ P with ℓP = 2^{r+1} ℓQ → inside
        let p = free_cube(1, 0, 0);
        let q = free_cube(2, -4, 3);
        assert_eq!(classify_pair(&p, &q, 3).unwrap(), PairClass::Inside);
        // disjoint cubes with dist ≥ ℓQ → separated
        let q2 = free_cube(2, -1, 4);
        assert_eq!(classify_pair(&p, &q2, 3).unwrap(), PairClass::Separated);
        // same size, adjacent → nearby
        let q3 = free_cube(2, 0, 1);
        assert_eq!(classify_pair(&p, &q3, 3).unwrap(), PairClass::Nearby);
        // nested but too shallow for inside, dist 0 → nearby
        let q4 = free_cube(2, -2, 1);
        assert_eq!(classify_pair(&p, &q4, 2).unwrap(), PairClass::Nearby);
    }

    #[test]
    fn two_atom_ledger_matches_hand_computation() {
        // atoms at 1/4, 3/4 with weights 1/2, K ≡ 1 off-diagonal:
        // ⟨T f₁, f₂⟩ = (f₁(a) f₂(b) + f₁(b) f₂(a)) / 4
        let m = Arc::new(
            Measure::new(
                1,
                vec![
                    Atom { pos: vec![Dyadic::new(1, -2)], weight: Dyadic::new(1, -1) },
                    Atom { pos: vec![Dyadic::new(3, -2)], weight: Dyadic::new(1, -1) },
                ],
            )
            .unwrap(),
        );
        let lam = DominatingFunction::power(8.0, ParamValue::rational_i64(1, 1)).unwrap();
        let kernel = Arc::new(Kernel::constant(1.0, 8.0, lam));
        let op: OperatorMatrix<BigRational> = OperatorMatrix::build(m.clone(), kernel).unwrap();
        let engine = PairingEngine::new(&op);
        let mk_idx = |gid: u8| {
            let mut g = DyadicGrid::free(ShiftSequence::zero(gid, 1, -4, 0));
            g.top = Some(g.cube_at(0, vec![0]).unwrap());
            GridIndex::new(Arc::new(g), m.clone())
        };
        let idx1 = mk_idx(1);
        let idx2 = mk_idx(2);
        let ctx = GoodnessContext::with_gamma(
            1,
            BigRational::new(BigInt::from(1), BigInt::from(1)),
            ParamValue::rational_i64(1, 1),
            crate::goodness::GammaValue::Exact(BigRational::new(
                BigInt::from(3),
                BigInt::from(4),
            )),
            [idx1.grid.clone(), idx2.grid.clone()],
        );
        let f1: SupportFunction<BigRational> =
            SupportFunction::from_fn(2, |i| Real::from_i64([1, 0][i]));
        let f2: SupportFunction<BigRational> =
            SupportFunction::from_fn(2, |i| Real::from_i64([0, 1][i]));
        let exp1 = expand(&f1, &idx1).unwrap();
        let exp2 = expand(&f2, &idx2).unwrap();
        let s0 = Side { f: &f1, exp: &exp1, index: &idx1 };
        let s1 = Side { f: &f2, exp: &exp2, index: &idx2 };
        let ledger = expand_form(&op, &engine, [&s0, &s1], &ctx).unwrap();
        assert_eq!(ledger.direct, <BigRational as Real>::from_ratio(1, 4));
        assert!(ledger.reconstruction_exact());
        // E-terms by hand: ⟨f₁⟩ = 1/2, T1 = (1/2, 1/2):
        // e1 = 1/2 · ⟨T1, f₂⟩ = 1/2 · (1/2 · 1 · 1/2) = 1/8
        assert_eq!(ledger.e_term1, <BigRational as Real>::from_ratio(1, 8));
    }

    #[test]
    fn perturb_identity_cases() {
        let sc = Scenario {
            measure: MeasureSpec::Uniform1d { m: 16 },
            kernel: KernelSpec::SignPower { s: ExponentSpec::Number(1.0) },
            r: 20, // exceeds the level range: everything vacuously good
            seed: 3,
            ..Scenario::default()
        };
        let inst: Instance<BigRational> = build_instance(&sc).unwrap();
        // no bad cubes in range → f = f̃ atomwise
        assert_eq!(inst.f[0], inst.f_tilde[0]);
        // constant f̃ → f = f̃ under any goodness parameters
        let sc2 = Scenario { r: 2, ..sc };
        let inst2: Instance<BigRational> = build_instance(&sc2).unwrap();
        let c: SupportFunction<BigRational> =
            SupportFunction::constant(16, Real::from_ratio(2, 3));
        let (pc, stats) = perturb(&c, &inst2.indices[0], &inst2.ctx).unwrap();
        assert_eq!(pc, c);
        assert_eq!(stats.good_active + stats.bad_active, 0);
    }

    #[test]
    fn collar_monotone_in_upsilon() {
        let m = crate::measure::builtin::uniform_1d(64).unwrap();
        let b = BoxRegion::new(vec![Dyadic::new(1, -2)], Dyadic::new(1, -1));
        let small = collar_atoms(&m, &b, (1, 8));
        let large = collar_atoms(&m, &b, (1, 2));
        for a in &small {
            assert!(large.contains(a), "collar must grow with υ");
        }
        assert!(large.len() > small.len());
    }

    #[test]
    fn surgery_empty_intersection_vanishes() {
        let sc = Scenario {
            measure: MeasureSpec::Uniform1d { m: 64 },
            kernel: KernelSpec::SignPower { s: ExponentSpec::Number(1.0) },
            r: 3,
            gamma_override: Some((3, 4)),
            seed: 17,
            ..Scenario::default()
        };
        let inst: Instance<BigRational> = build_instance(&sc).unwrap();
        // pick any nearby pair with disjoint children
        let s0 = Side { f: &inst.f[0], exp: &inst.exps[0], index: &inst.indices[0] };
        let s1 = Side { f: &inst.f[1], exp: &inst.exps[1], index: &inst.indices[1] };
        let ledger = expand_form(&inst.op, &inst.engine, [&s0, &s1], &inst.ctx).unwrap();
        let tri = &ledger.triangles[0];
        let mut found = false;
        for term in tri.terms.iter().filter(|t| t.class == PairClass::Nearby) {
            for i_slot in 0..2 {
                for j_slot in 0..2 {
                    let sets = surgery(
                        &inst.op,
                        &inst.engine,
                        &inst.indices[0],
                        &inst.indices[1],
                        &term.big,
                        &term.small,
                        i_slot,
                        j_slot,
                        (1, 4),
                        (1, 8),
                        &inst.grid3,
                        false,
                    )
                    .unwrap();
                    let qp_empty = sets.q_delta.is_empty() && sets.q_boundary.is_empty();
                    if qp_empty {
                        assert!(sets.m_terms[2].is_zero());
                        assert!(sets.alpha_terms.iter().all(|a| a.is_zero()));
                        found = true;
                    }
                }
            }
        }
        assert!(found, "expected at least one empty-intersection child pair");
    }
}
