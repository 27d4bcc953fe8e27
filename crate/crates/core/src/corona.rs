//! Stopping trees (corona decomposition) and their consequences: sparseness,
//! quasi-orthogonality, coronal martingale projections and layer families.
//!
//! Roots are the maximal good cubes inside the top cube; below a stopping
//! cube `S`, the next generation consists of the maximal cubes `Q ⊊ S` with
//! `⟨|f|⟩_Q > 4 σ(S)` such that `Q` or its dyadic parent is good. Recursion
//! descends only while `μ(Q) > 0`: zero-mass cubes average to zero by
//! convention and can never stop.

use crate::dyadic::{BoxRegion, Dyadic};
use crate::goodness::GoodnessContext;
use crate::grid::{Cube, CubeKey, GridIndex};
use crate::martingale::{average, MartingaleExpansion, SupportFunction};
use crate::real::Real;
use crate::Result;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Clone, Debug)]
pub struct StopNode<R: Real> {
    pub cube: Cube,
    /// `σ(S) = ⟨|f|⟩_S`
    pub sigma: R,
    pub parent: Option<usize>,
    pub depth: u32,
    pub children: Vec<usize>,
}

/// Result of a stopping-parent query: a tree node or the whole space
/// (`π_S Q = R^n` when no stopping cube contains `Q`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRef {
    Node(usize),
    WholeSpace,
}

#[derive(Clone, Debug)]
pub struct StoppingTree<R: Real> {
    pub grid_id: u8,
    pub nodes: Vec<StopNode<R>>,
    pub roots: Vec<usize>,
    node_of: BTreeMap<CubeKey, usize>,
}

impl<R: Real> StoppingTree<R> {
    pub fn node_for_cube(&self, key: &CubeKey) -> Option<usize> {
        self.node_of.get(key).copied()
    }

    /// `π^t`: follow tree parents; past the root means the whole space.
    pub fn ancestor(&self, node: usize, t: u32) -> StopRef {
        let mut cur = node;
        for _ in 0..t {
            match self.nodes[cur].parent {
                Some(p) => cur = p,
                None => return StopRef::WholeSpace,
            }
        }
        StopRef::Node(cur)
    }

    /// Minimal stopping cube containing the box `b` (same- or cross-grid):
    /// any stopping cube containing `b` also contains its anchor, so the
    /// candidates form the grid ancestor chain of the anchor cell.
    pub fn stopping_parent_box(&self, b: &BoxRegion, index: &GridIndex) -> StopRef {
        let grid = &index.grid;
        let side_level = b.side.exponent() + (127 - b.side.mantissa().leading_zeros() as i32);
        let start = side_level.max(grid.level_min());
        let mut level = start;
        let mut cube = match grid.cube_containing(&b.lo, level) {
            Ok(c) => c,
            Err(_) => return StopRef::WholeSpace,
        };
        loop {
            if let Some(&n) = self.node_of.get(&cube.key()) {
                if b.subset_of(&self.nodes[n].cube.as_box()) {
                    return StopRef::Node(n);
                }
            }
            if level >= grid.level_max() {
                return StopRef::WholeSpace;
            }
            cube = grid.parent(&cube, 1).expect("in range");
            level += 1;
        }
    }

    /// `π^t_{S} Q` for a cube of any grid.
    pub fn stopping_parent(&self, q: &Cube, index: &GridIndex, t: u32) -> StopRef {
        match self.stopping_parent_box(&q.as_box(), index) {
            StopRef::WholeSpace => StopRef::WholeSpace,
            StopRef::Node(n) => self.ancestor(n, t),
        }
    }

    /// Depth-`t` descendants (`ch^t`), in node order.
    pub fn descendants_at_depth(&self, node: usize, t: u32) -> Vec<usize> {
        let mut cur = vec![node];
        for _ in 0..t {
            let mut next = Vec::new();
            for &n in &cur {
                next.extend_from_slice(&self.nodes[n].children);
            }
            cur = next;
        }
        cur
    }

    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.nodes[out[i]].children);
            i += 1;
        }
        out
    }

    /// Depth of `desc` below `anc`, if `anc` is a tree ancestor.
    pub fn depth_between(&self, anc: usize, desc: usize) -> Option<u32> {
        let mut cur = desc;
        let mut t = 0;
        loop {
            if cur == anc {
                return Some(t);
            }
            cur = self.nodes[cur].parent?;
            t += 1;
        }
    }

    /// One line per stopping cube: `level anchor σ parent-index`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let anchor: Vec<String> = n.cube.anchor.iter().map(|a| a.to_string()).collect();
            let parent = n.parent.map(|p| p as i64).unwrap_or(-1);
            let _ = writeln!(
                out,
                "{} {} {} {}",
                n.cube.level,
                anchor.join(","),
                n.sigma.to_f64(),
                parent
            );
        }
        out
    }
}

/// Build the stopping tree of `f` over its grid.
pub fn build_stopping_tree<R: Real>(
    f: &SupportFunction<R>,
    index: &GridIndex,
    ctx: &GoodnessContext,
) -> Result<StoppingTree<R>> {
    let grid_id = index.grid.grid_id();
    let abs_f = f.abs();
    let mut tree = StoppingTree {
        grid_id,
        nodes: Vec::new(),
        roots: Vec::new(),
        node_of: BTreeMap::new(),
    };

    // roots: maximal good occupied cubes inside the top cube
    let top = index.top().clone();
    let mut stack = vec![top];
    let mut work: Vec<usize> = Vec::new();
    while let Some(cube) = stack.pop() {
        if index.atoms_in(&cube).is_empty() {
            continue;
        }
        if ctx.is_good(&cube) {
            let sigma = average(&abs_f, &cube, index);
            let id = tree.nodes.len();
            tree.node_of.insert(cube.key(), id);
            tree.nodes.push(StopNode { cube, sigma, parent: None, depth: 0, children: Vec::new() });
            tree.roots.push(id);
            work.push(id);
        } else if cube.level > index.grid.level_min() {
            let mut kids = index.grid.children(&cube)?;
            kids.reverse();
            stack.extend(kids);
        }
    }

    // inductive stage: maximal Q ⊊ S with ⟨|f|⟩_Q > 4σ(S) and (Q or πQ good)
    while let Some(s_id) = work.pop() {
        let s_cube = tree.nodes[s_id].cube.clone();
        let four_sigma = tree.nodes[s_id].sigma.clone()
            + tree.nodes[s_id].sigma.clone()
            + tree.nodes[s_id].sigma.clone()
            + tree.nodes[s_id].sigma.clone();
        if s_cube.level == index.grid.level_min() {
            continue;
        }
        let mut stack: Vec<Cube> = index.grid.children(&s_cube)?;
        while let Some(cube) = stack.pop() {
            let atoms = index.atoms_in(&cube);
            if atoms.is_empty() {
                continue;
            }
            let avg = average(&abs_f, &cube, index);
            let side_ok = ctx.is_good(&cube)
                || ctx.is_good(&index.grid.parent(&cube, 1).expect("parent in range"));
            if avg > four_sigma && side_ok {
                let id = tree.nodes.len();
                let depth = tree.nodes[s_id].depth + 1;
                tree.node_of.insert(cube.key(), id);
                tree.nodes.push(StopNode {
                    cube,
                    sigma: avg,
                    parent: Some(s_id),
                    depth,
                    children: Vec::new(),
                });
                tree.nodes[s_id].children.push(id);
                work.push(id);
                continue;
            }
            if cube.level > index.grid.level_min() {
                // a single-atom cube has constant averages below; only the
                // goodness side condition can still flip deeper
                if atoms.len() == 1 && avg <= four_sigma {
                    continue;
                }
                stack.extend(index.grid.children(&cube)?);
            }
        }
    }
    Ok(tree)
}

/// Sparseness `Σ_{S' ∈ ch(S)} μ(S') ≤ μ(S)/4`, checked exactly on every node.
pub fn sparseness_violations<R: Real>(tree: &StoppingTree<R>, index: &GridIndex) -> usize {
    let mut bad = 0;
    for n in &tree.nodes {
        let mut child_mass = Dyadic::ZERO;
        for &c in n.children.iter() {
            child_mass = child_mass + index.mass(&tree.nodes[c].cube);
        }
        let own = index.mass(&n.cube);
        // 4 Σ μ(S') ≤ μ(S), exact dyadic comparison
        if child_mass.double().double() > own {
            bad += 1;
        }
    }
    bad
}

/// Carleson packing: `Σ_{S' ⊆ S} μ(S') ≤ (4/3) μ(S)` via the geometric series
/// the sparseness gives.
pub fn carleson_violations<R: Real>(tree: &StoppingTree<R>, index: &GridIndex) -> usize {
    let mut bad = 0;
    for s in 0..tree.nodes.len() {
        let total: f64 = tree
            .subtree(s)
            .iter()
            .map(|&n| index.mass(&tree.nodes[n].cube).to_f64())
            .sum();
        if total > 4.0 / 3.0 * index.mass(&tree.nodes[s].cube).to_f64() * (1.0 + 1e-12) {
            bad += 1;
        }
    }
    bad
}

/// `Σ_S σ(S)^p μ(S)` against the explicit bound
/// `(4/3) (p/(p-1))^p ‖f‖_p^p` (disjointness of the sets `E_S` plus the dyadic
/// maximal-function bound).
pub fn quasi_orthogonality<R: Real>(
    tree: &StoppingTree<R>,
    f: &SupportFunction<R>,
    index: &GridIndex,
    p: f64,
) -> (f64, f64, f64) {
    assert!(p > 1.0);
    let lhs: f64 = tree
        .nodes
        .iter()
        .map(|n| n.sigma.to_f64().abs().powf(p) * index.mass(&n.cube).to_f64())
        .sum();
    let dual = p / (p - 1.0);
    let rhs = 4.0 / 3.0 * dual.powf(p) * f.lp_norm(&index.measure, p).powf(p);
    (lhs, rhs, lhs / rhs)
}

/// `⟨|f|⟩_Q ≤ 4 σ(π_S Q)` for every occupied non-root cube with `Q` or `πQ`
/// good; returns violations (should be none, by construction of the tree).
pub fn sigma_estimate_violations<R: Real>(
    tree: &StoppingTree<R>,
    f: &SupportFunction<R>,
    index: &GridIndex,
    ctx: &GoodnessContext,
) -> usize {
    let abs_f = f.abs();
    let mut bad = 0;
    for cube in index.occupied_cubes() {
        if tree.node_of.contains_key(&cube.key()) {
            continue;
        }
        if cube.level >= index.grid.level_max() {
            continue;
        }
        let side_ok = ctx.is_good(&cube)
            || ctx.is_good(&index.grid.parent(&cube, 1).expect("in range"));
        if !side_ok {
            continue;
        }
        match tree.stopping_parent_box(&cube.as_box(), index) {
            StopRef::WholeSpace => {}
            StopRef::Node(s) => {
                let avg = average(&abs_f, &cube, index).to_f64();
                if avg > 4.0 * tree.nodes[s].sigma.to_f64() * (1.0 + 1e-12) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// `P_{j,S} φ = Σ_{Q: π_S Q = S} Δ_Q φ` for every node, plus the leftover sum
/// of differences with whole-space parent. The pieces plus the top term
/// reassemble φ exactly (partition of cubes by stopping parent).
pub fn coronal_projections<R: Real>(
    tree: &StoppingTree<R>,
    exp: &MartingaleExpansion<R>,
    index: &GridIndex,
) -> (BTreeMap<usize, SupportFunction<R>>, SupportFunction<R>) {
    let n = index.measure.len();
    let mut per_node: BTreeMap<usize, SupportFunction<R>> = BTreeMap::new();
    let mut leftover = SupportFunction::zero(n);
    for d in exp.deltas.values() {
        let target = match tree.stopping_parent_box(&d.cube.as_box(), index) {
            StopRef::Node(s) => Some(s),
            StopRef::WholeSpace => None,
        };
        let sup = d.to_support(index);
        match target {
            Some(s) => {
                let entry = per_node.entry(s).or_insert_with(|| SupportFunction::zero(n));
                *entry = entry.add(&sup);
            }
            None => leftover = leftover.add(&sup),
        }
    }
    (per_node, leftover)
}

/// `Σ_S ‖P_{j,S} f‖_p^p / ‖f‖_p^p`.
pub fn projection_sum_ratio<R: Real>(
    tree: &StoppingTree<R>,
    exp: &MartingaleExpansion<R>,
    f: &SupportFunction<R>,
    index: &GridIndex,
    p: f64,
) -> f64 {
    let (projs, _) = coronal_projections(tree, exp, index);
    let total: f64 = projs
        .values()
        .map(|g| g.lp_norm(&index.measure, p).powf(p))
        .sum();
    total / f.lp_norm(&index.measure, p).powf(p)
}

/// The family `L_2(S)` for one base cube `S ∈ S_1`, with layer indices.
#[derive(Clone, Debug)]
pub struct LayerFamily {
    pub base: usize,
    /// (tree-2 node, layer index): layer 0 are the maximal members
    pub members: Vec<(usize, u32)>,
}

/// Build `L_2(S) = { π_{S_2} Q : (P,Q) inside, π_{S_1} P_Q = S }` for every
/// `S` appearing, and validate the layer lemma: members in layer
/// `k ≥ 2(r+1)` are contained in `S`, and `2^{k-1} ℓR ≤ 2^r ℓS` for `k ≥ 1`.
pub struct LayersOutcome {
    pub families: Vec<LayerFamily>,
    pub violations: Vec<String>,
    pub members_total: usize,
}

pub fn layers<R: Real>(
    tree1: &StoppingTree<R>,
    tree2: &StoppingTree<R>,
    // (S node in tree1, R node in tree2) pairs from the inside family
    base_members: &[(usize, usize)],
    r: u32,
) -> LayersOutcome {
    let mut by_base: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, rnode) in base_members {
        let v = by_base.entry(*s).or_default();
        if !v.contains(rnode) {
            v.push(*rnode);
        }
    }
    let mut families = Vec::new();
    let mut violations = Vec::new();
    let mut members_total = 0;
    for (base, mut rs) in by_base {
        // containment forest within the family: parent = minimal strict superset
        rs.sort_by_key(|&n| std::cmp::Reverse(tree2.nodes[n].cube.level));
        let mut layer_of: BTreeMap<usize, u32> = BTreeMap::new();
        let mut members = Vec::new();
        for &rn in &rs {
            let rbox = tree2.nodes[rn].cube.as_box();
            let mut best: Option<(i32, usize)> = None;
            for &cand in &rs {
                if cand == rn {
                    continue;
                }
                let cbox = tree2.nodes[cand].cube.as_box();
                if tree2.nodes[cand].cube.level > tree2.nodes[rn].cube.level
                    && rbox.subset_of(&cbox)
                {
                    let lv = tree2.nodes[cand].cube.level;
                    if best.map(|(bl, _)| lv < bl).unwrap_or(true) {
                        best = Some((lv, cand));
                    }
                }
            }
            let layer = match best {
                None => 0,
                Some((_, p)) => layer_of.get(&p).copied().unwrap_or(0) + 1,
            };
            layer_of.insert(rn, layer);
            members.push((rn, layer));
        }
        // validate the layer estimates
        let sbox = tree1.nodes[base].cube.as_box();
        let ls = tree1.nodes[base].cube.level;
        for &(rn, k) in &members {
            members_total += 1;
            let rc = &tree2.nodes[rn].cube;
            if k >= 1 {
                // 2^{k-1} ℓR ≤ 2^r ℓS
                if (rc.level + k as i32 - 1) > (ls + r as i32) {
                    violations.push(format!(
                        "layer estimate: R level {} layer {} vs S level {} r {}",
                        rc.level, k, ls, r
                    ));
                }
            }
            if k >= 2 * (r + 1) && !rc.as_box().subset_of(&sbox) {
                violations.push(format!(
                    "containment: layer {} member level {} not inside S level {}",
                    k, rc.level, ls
                ));
            }
        }
        families.push(LayerFamily { base, members });
    }
    LayersOutcome { families, violations, members_total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DyadicGrid;
    use crate::interval::ParamValue;
    use crate::measure::builtin;
    use crate::real::Real;
    use crate::rng::Rng;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use std::sync::Arc;

    fn setup(
        m: crate::measure::Measure,
        seed: u64,
        r: u32,
    ) -> (GridIndex, GridIndex, Arc<GoodnessContext>) {
        // γ = 3/4 override keeps good cubes plentiful at desk scale so
        // stopping descent actually happens; the corona identities are
        // γ-independent
        let lmin = m.resolving_level() - 1;
        let am = Arc::new(m);
        let g1 = Arc::new(DyadicGrid::over_measure(seed, 1, &am, lmin, 2).unwrap());
        let g2 = Arc::new(DyadicGrid::over_measure(seed ^ 0xabc, 2, &am, lmin, 2).unwrap());
        let ctx = Arc::new(GoodnessContext::with_gamma(
            r,
            BigRational::from_integer(BigInt::from(1)),
            ParamValue::rational_i64(1, 1),
            crate::goodness::GammaValue::Exact(BigRational::new(
                BigInt::from(3),
                BigInt::from(4),
            )),
            [g1.clone(), g2.clone()],
        ));
        (
            GridIndex::new(g1, am.clone()),
            GridIndex::new(g2, am),
            ctx,
        )
    }

    fn random_fn(n: usize, rng: &mut Rng) -> SupportFunction<BigRational> {
        SupportFunction::from_fn(n, |_| Real::from_f64_lossless(rng.next_signed_dyadic(10)))
    }

    #[test]
    fn constant_function_tree_is_roots_only() {
        let m = builtin::uniform_1d(16).unwrap();
        let (idx, _, ctx) = setup(m, 21, 3);
        let f: SupportFunction<BigRational> =
            SupportFunction::constant(16, Real::from_ratio(5, 3));
        let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
        // every average equals 5/3, never above 4σ(root)
        assert_eq!(tree.nodes.len(), tree.roots.len());
        // vacuously good top is the single root
        assert_eq!(tree.roots.len(), 1);
        assert_eq!(tree.nodes[0].cube, *idx.top());
    }

    #[test]
    fn spike_tree_matches_brute_force() {
        // f = heavy spike on one atom: stopping cubes are exactly the cubes
        // where the average of |f| jumps above 4σ of the enclosing stopping
        // cube with the goodness side condition; compare against a direct
        // scan over all occupied cubes.
        let m = builtin::uniform_1d(16).unwrap();
        let (idx, _, ctx) = setup(m, 33, 3);
        let f: SupportFunction<BigRational> = SupportFunction::from_fn(16, |i| {
            if i == 5 {
                Real::from_i64(100)
            } else {
                Real::from_ratio(1, 16)
            }
        });
        let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
        assert!(tree.nodes.len() > 1, "spike must create stopping cubes");
        // brute-force re-derivation: for each non-root node, its parent must
        // be the minimal enclosing stopping cube and the condition must hold
        let abs_f = f.abs();
        for n in &tree.nodes {
            if let Some(p) = n.parent {
                let sigma_p = tree.nodes[p].sigma.clone();
                let four_sigma = sigma_p.clone() * <BigRational as Real>::from_i64(4);
                assert!(n.sigma > four_sigma);
                let side_ok = ctx.is_good(&n.cube)
                    || ctx.is_good(&idx.grid.parent(&n.cube, 1).unwrap());
                assert!(side_ok);
                // maximality: the dyadic parent of the stopping cube must
                // fail the condition (or be the stopping parent itself)
                let par = idx.grid.parent(&n.cube, 1).unwrap();
                if par.key() != tree.nodes[p].cube.key() {
                    let avg = average(&abs_f, &par, &idx);
                    let par_side_ok = ctx.is_good(&par)
                        || ctx.is_good(&idx.grid.parent(&par, 1).unwrap());
                    assert!(
                        !(avg > four_sigma && par_side_ok),
                        "parent should have stopped first"
                    );
                }
            }
        }
        assert_eq!(sparseness_violations(&tree, &idx), 0);
    }

    #[test]
    fn sparseness_and_carleson_on_random_trees() {
        let m = builtin::cantor_third(6).unwrap();
        let mut rng = Rng::seed_from(55);
        for s in 0..10 {
            let (idx, _, ctx) = setup(m.clone(), s, 3);
            let f = random_fn(64, &mut rng);
            let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
            assert_eq!(sparseness_violations(&tree, &idx), 0);
            assert_eq!(carleson_violations(&tree, &idx), 0);
            assert_eq!(sigma_estimate_violations(&tree, &f, &idx, &ctx), 0);
        }
    }

    #[test]
    fn stopping_parent_queries() {
        let m = builtin::uniform_1d(16).unwrap();
        let (idx, _, ctx) = setup(m, 77, 3);
        let f: SupportFunction<BigRational> = SupportFunction::from_fn(16, |i| {
            if i == 3 {
                Real::from_i64(64)
            } else {
                Real::from_ratio(1, 8)
            }
        });
        let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
        // a stopping cube is its own parent at t = 0
        for (i, n) in tree.nodes.iter().enumerate() {
            assert_eq!(
                tree.stopping_parent(&n.cube, &idx, 0),
                StopRef::Node(i)
            );
        }
        // agreement with a linear scan for random cubes
        let mut rng = Rng::seed_from(7);
        for _ in 0..100 {
            let a = rng.next_below(16) as usize;
            let k = rng.next_range_i64(idx.grid.level_min() as i64, 1) as i32;
            let q = idx.grid.cube_containing(idx.measure.pos(a), k).unwrap();
            let got = tree.stopping_parent(&q, &idx, 0);
            let mut best: Option<usize> = None;
            for (i, n) in tree.nodes.iter().enumerate() {
                if q.as_box().subset_of(&n.cube.as_box()) {
                    if best
                        .map(|b| n.cube.level < tree.nodes[b].cube.level)
                        .unwrap_or(true)
                    {
                        best = Some(i);
                    }
                }
            }
            match best {
                Some(b) => assert_eq!(got, StopRef::Node(b)),
                None => assert_eq!(got, StopRef::WholeSpace),
            }
        }
        // deep ancestor queries fall off the root
        assert_eq!(tree.ancestor(tree.nodes.len() - 1, 64), StopRef::WholeSpace);
    }

    #[test]
    fn tree_independent_of_atom_input_order() {
        let m = builtin::uniform_1d(32).unwrap();
        let mut atoms = m.atoms().to_vec();
        atoms.reverse();
        atoms.swap(3, 17);
        let m_shuffled = crate::measure::Measure::new(1, atoms).unwrap();
        let mut rng = Rng::seed_from(61);
        let f_vals: Vec<BigRational> = (0..32)
            .map(|_| Real::from_f64_lossless(rng.next_heavy_dyadic(12)))
            .collect();
        let (i1, _, c1) = setup(m, 71, 3);
        let (i2, _, c2) = setup(m_shuffled, 71, 3);
        let f1: SupportFunction<BigRational> =
            SupportFunction { values: f_vals.clone() };
        let f2: SupportFunction<BigRational> = SupportFunction { values: f_vals };
        let t1 = build_stopping_tree(&f1, &i1, &c1).unwrap();
        let t2 = build_stopping_tree(&f2, &i2, &c2).unwrap();
        assert_eq!(t1.dump(), t2.dump());
    }

    #[test]
    fn quasi_orthogonality_bound() {
        let m = builtin::cantor_third(6).unwrap();
        let mut rng = Rng::seed_from(91);
        for s in 0..5 {
            let (idx, _, ctx) = setup(m.clone(), 100 + s, 3);
            for _ in 0..20 {
                let f = random_fn(64, &mut rng);
                if f.lp_norm(&idx.measure, 2.0) == 0.0 {
                    continue;
                }
                let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
                for p in [2.0, 1.5] {
                    let (lhs, rhs, _) = quasi_orthogonality(&tree, &f, &idx, p);
                    assert!(lhs <= rhs * (1.0 + 1e-10), "p={p} lhs={lhs} rhs={rhs}");
                }
            }
        }
    }

    #[test]
    fn projections_reassemble_function() {
        let m = builtin::uniform_1d(16).unwrap();
        let (idx, _, ctx) = setup(m, 123, 3);
        let mut rng = Rng::seed_from(3);
        let f = random_fn(16, &mut rng);
        let exp = crate::martingale::expand(&f, &idx).unwrap();
        let tree = build_stopping_tree(&f, &idx, &ctx).unwrap();
        let (projs, leftover) = coronal_projections(&tree, &exp, &idx);
        let mut sum = SupportFunction::constant(16, exp.top_avg.clone());
        for p in projs.values() {
            sum = sum.add(p);
        }
        sum = sum.add(&leftover);
        assert_eq!(sum, f);
        // f constant: every projection vanishes
        let c: SupportFunction<BigRational> = SupportFunction::constant(16, Real::one());
        let exp_c = crate::martingale::expand(&c, &idx).unwrap();
        let (projs_c, left_c) = coronal_projections(&tree, &exp_c, &idx);
        assert!(projs_c.is_empty());
        assert!(left_c.values.iter().all(|v| v.is_zero()));
        // p = 2: Σ ‖P_S f‖² ≤ ‖f‖² (orthogonality)
        let ratio = projection_sum_ratio(&tree, &exp, &f, &idx, 2.0);
        assert!(ratio <= 1.0 + 1e-10, "ratio {ratio}");
    }
}

