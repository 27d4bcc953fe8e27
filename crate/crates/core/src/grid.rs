//! Randomly shifted dyadic lattices.
//!
//! A grid is parametrized by per-level shift bits `ω_k ∈ {0,1}^n`: the anchor
//! of a level-`k` cube is the unshifted anchor plus `Σ_{k' < k} 2^{k'} ω_{k'}`.
//! This reproduces the nesting-consistent translation: children of shifted
//! cubes are shifted cubes. The bi-infinite sequence of the construction is
//! truncated to `[level_min, level_max]`; the top cube is a level-`level_max`
//! cell containing the support, re-sampled if the sampled shift splits the
//! support (the infinite construction has one almost surely).

use crate::dyadic::{BoxRegion, Dyadic};
use crate::measure::Measure;
use crate::rng::Rng;
use crate::{CzError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Per-level random translation bits for one grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSequence {
    pub grid_id: u8,
    pub level_min: i32,
    pub level_max: i32,
    /// `bits[i][d]` is the shift bit of level `level_min + i` in dimension `d`.
    pub bits: Vec<Vec<u8>>,
    pub seed: u64,
}

impl ShiftSequence {
    pub fn dim(&self) -> usize {
        self.bits.first().map(|b| b.len()).unwrap_or(0)
    }

    pub fn zero(grid_id: u8, dim: usize, level_min: i32, level_max: i32) -> Self {
        let n_levels = (level_max - level_min) as usize + 1;
        ShiftSequence {
            grid_id,
            level_min,
            level_max,
            bits: vec![vec![0; dim]; n_levels],
            seed: 0,
        }
    }

    /// Replay line: `j k_min k_max hex-bits seed`. Bits are packed level-major,
    /// dimension-minor, 4 per hex digit.
    pub fn to_line(&self) -> String {
        let mut flat = Vec::new();
        for lv in &self.bits {
            flat.extend_from_slice(lv);
        }
        let mut hex = String::new();
        for chunk in flat.chunks(4) {
            let mut v = 0u8;
            for (i, b) in chunk.iter().enumerate() {
                v |= b << i;
            }
            let _ = write!(hex, "{v:x}");
        }
        format!(
            "{} {} {} {} {}",
            self.grid_id, self.level_min, self.level_max, hex, self.seed
        )
    }

    pub fn from_line(line: &str, dim: usize) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(CzError::Parse("shift line needs 5 fields".into()));
        }
        let grid_id = f[0].parse().map_err(|_| CzError::Parse("bad grid id".into()))?;
        let level_min = f[1].parse().map_err(|_| CzError::Parse("bad k_min".into()))?;
        let level_max = f[2].parse().map_err(|_| CzError::Parse("bad k_max".into()))?;
        let seed = f[4].parse().map_err(|_| CzError::Parse("bad seed".into()))?;
        let n_levels = (level_max - level_min) as usize + 1;
        let mut flat = Vec::with_capacity(n_levels * dim);
        for c in f[3].chars() {
            let v = c.to_digit(16).ok_or_else(|| CzError::Parse("bad hex".into()))? as u8;
            for i in 0..4 {
                flat.push(v >> i & 1);
            }
        }
        if flat.len() < n_levels * dim {
            return Err(CzError::Parse("hex bits too short".into()));
        }
        let bits = flat[..n_levels * dim]
            .chunks(dim)
            .map(|c| c.to_vec())
            .collect();
        Ok(ShiftSequence { grid_id, level_min, level_max, bits, seed })
    }
}

/// Each bit independent uniform; deterministic in `(seed, grid_id)`.
pub fn sample_shift(
    seed: u64,
    grid_id: u8,
    dim: usize,
    level_min: i32,
    level_max: i32,
) -> ShiftSequence {
    assert!(level_max >= level_min, "level range empty");
    let mut rng = Rng::fork(seed, 0x5348 + grid_id as u64);
    let n_levels = (level_max - level_min) as usize + 1;
    let bits = (0..n_levels)
        .map(|_| (0..dim).map(|_| rng.next_bit()).collect())
        .collect();
    ShiftSequence { grid_id, level_min, level_max, bits, seed }
}

/// A cube of a shifted grid: identified by `(grid, level, lattice index)`,
/// with the exact anchor (lower-left corner after shift) materialized.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Cube {
    pub grid_id: u8,
    pub level: i32,
    pub idx: Vec<i64>,
    pub anchor: Vec<Dyadic>,
}

impl Cube {
    pub fn side(&self) -> Dyadic {
        Dyadic::two_pow(self.level)
    }

    pub fn as_box(&self) -> BoxRegion {
        BoxRegion::new(self.anchor.clone(), self.side())
    }

    pub fn midpoint(&self) -> Vec<Dyadic> {
        self.anchor
            .iter()
            .map(|a| *a + Dyadic::two_pow(self.level - 1))
            .collect()
    }

    /// Key for ordered maps: deterministic iteration everywhere.
    pub fn key(&self) -> CubeKey {
        (self.grid_id, self.level, self.idx.clone())
    }
}

pub type CubeKey = (u8, i32, Vec<i64>);

/// `D(Q, P) = ℓQ + dist(Q, P) + ℓP`, exact.
pub fn long_distance(q: &Cube, p: &Cube) -> Dyadic {
    q.side() + q.as_box().dist(&p.as_box()) + p.side()
}

#[derive(Clone, Debug)]
pub struct DyadicGrid {
    pub shifts: ShiftSequence,
    /// Cumulative shift offset per level: `offsets[i]` for level `level_min+i`.
    offsets: Vec<Vec<Dyadic>>,
    /// Top cube containing the support, when the grid was built over a measure.
    pub top: Option<Cube>,
    /// Shift samples consumed to find a top cube.
    pub attempts: u32,
}

impl DyadicGrid {
    /// A free lattice: cube arithmetic only, no top cube.
    pub fn free(shifts: ShiftSequence) -> Self {
        let offsets = Self::offsets_of(&shifts);
        DyadicGrid { shifts, offsets, top: None, attempts: 0 }
    }

    fn offsets_of(shifts: &ShiftSequence) -> Vec<Vec<Dyadic>> {
        let dim = shifts.dim();
        let n_levels = shifts.bits.len();
        let mut offsets = Vec::with_capacity(n_levels);
        let mut acc = vec![Dyadic::ZERO; dim];
        // offset at level k sums shifts of strictly finer levels
        for i in 0..n_levels {
            offsets.push(acc.clone());
            let k = shifts.level_min + i as i32;
            for (d, bit) in shifts.bits[i].iter().enumerate().take(dim) {
                if *bit == 1 {
                    acc[d] = acc[d] + Dyadic::two_pow(k);
                }
            }
        }
        offsets
    }

    /// Build over a measure: the sampled shift must put the whole support in
    /// one top-level cell; re-samples with consecutive sub-seeds otherwise.
    pub fn over_measure(
        seed: u64,
        grid_id: u8,
        measure: &Measure,
        level_min: i32,
        level_max: i32,
    ) -> Result<Self> {
        for attempt in 0..64u32 {
            let shifts = sample_shift(
                seed.wrapping_add(attempt as u64 * 0x9e37),
                grid_id,
                measure.dim(),
                level_min,
                level_max,
            );
            let mut grid = DyadicGrid::free(shifts);
            let idx0 = grid.point_index(measure.pos(0), level_max);
            if measure
                .atoms()
                .iter()
                .all(|a| grid.point_index(&a.pos, level_max) == idx0)
            {
                let top = grid.cube_at(level_max, idx0)?;
                grid.top = Some(top);
                grid.attempts = attempt + 1;
                return Ok(grid);
            }
        }
        Err(CzError::Grid(format!(
            "no level-{level_max} cube contains the support after 64 shift samples"
        )))
    }

    pub fn grid_id(&self) -> u8 {
        self.shifts.grid_id
    }

    pub fn dim(&self) -> usize {
        self.shifts.dim()
    }

    pub fn level_min(&self) -> i32 {
        self.shifts.level_min
    }

    pub fn level_max(&self) -> i32 {
        self.shifts.level_max
    }

    pub fn check_level(&self, k: i32) -> Result<()> {
        if k < self.level_min() || k > self.level_max() {
            return Err(CzError::LevelRange(k, self.level_min(), self.level_max()));
        }
        Ok(())
    }

    pub fn offset(&self, level: i32) -> &[Dyadic] {
        let i = (level - self.level_min()) as usize;
        &self.offsets[i]
    }

    /// Lattice index of the level-`k` cell containing `x` (half-open boxes).
    pub fn point_index(&self, x: &[Dyadic], k: i32) -> Vec<i64> {
        let off = self.offset(k);
        x.iter()
            .zip(off)
            .map(|(xi, oi)| {
                let v = (*xi - *oi).floor_div_pow2(k);
                i64::try_from(v).expect("lattice index fits i64")
            })
            .collect()
    }

    pub fn cube_at(&self, level: i32, idx: Vec<i64>) -> Result<Cube> {
        self.check_level(level)?;
        let off = self.offset(level);
        let anchor = idx
            .iter()
            .zip(off)
            .map(|(i, o)| *o + Dyadic::new(*i as i128, level))
            .collect();
        Ok(Cube { grid_id: self.grid_id(), level, idx, anchor })
    }

    /// The unique level-`k` grid cube whose half-open box contains `x`.
    /// Errors when the grid has a top cube and `x` lies outside it.
    pub fn cube_containing(&self, x: &[Dyadic], k: i32) -> Result<Cube> {
        self.check_level(k)?;
        if let Some(top) = &self.top {
            if !top.as_box().contains_half_open(x) {
                return Err(CzError::OutOfDomain(format!(
                    "{:?}",
                    x.iter().map(|v| v.to_f64()).collect::<Vec<_>>()
                )));
            }
        }
        self.cube_at(k, self.point_index(x, k))
    }

    pub fn children(&self, q: &Cube) -> Result<Vec<Cube>> {
        let k = q.level - 1;
        self.check_level(k)?;
        let dim = self.dim();
        let i = (k - self.level_min()) as usize;
        let omega = &self.shifts.bits[i];
        let mut out = Vec::with_capacity(1 << dim);
        for c in 0..(1u32 << dim) {
            let idx: Vec<i64> = (0..dim)
                .map(|d| 2 * q.idx[d] + (c >> d & 1) as i64 + omega[d] as i64)
                .collect();
            out.push(self.cube_at(k, idx)?);
        }
        Ok(out)
    }

    /// `π^t Q`: the `t`-fold dyadic parent.
    pub fn parent(&self, q: &Cube, t: u32) -> Result<Cube> {
        let mut cur = q.clone();
        for _ in 0..t {
            let k = cur.level + 1;
            self.check_level(k)?;
            let i = (cur.level - self.level_min()) as usize;
            let omega = &self.shifts.bits[i];
            let idx = cur
                .idx
                .iter()
                .zip(omega)
                .map(|(ix, w)| (*ix - *w as i64).div_euclid(2))
                .collect();
            cur = self.cube_at(k, idx)?;
        }
        Ok(cur)
    }

    /// Which child slot of `parent(q)` the cube `q` occupies.
    pub fn child_slot(&self, q: &Cube) -> u32 {
        let i = (q.level - self.level_min()) as usize;
        let omega = &self.shifts.bits[i];
        let mut slot = 0u32;
        for (d, w) in omega.iter().enumerate().take(self.dim()) {
            let rem = (q.idx[d] - *w as i64).rem_euclid(2);
            slot |= (rem as u32) << d;
        }
        slot
    }

    /// Distance from the box `q` to the level-`k` lattice skeleton (the union
    /// of all cell boundaries). Equals `min_P dist(q, ∂P)` over level-`k`
    /// cubes `P`: every `∂P` lies in the skeleton, and the nearest skeleton
    /// point lies on the boundary of some cell.
    pub fn skeleton_distance(&self, q: &BoxRegion, k: i32) -> Dyadic {
        let off = self.offset(k);
        let cell = Dyadic::two_pow(k);
        let mut best: Option<Dyadic> = None;
        for (d, o) in off.iter().enumerate().take(self.dim()) {
            let lo = q.lo[d] - *o;
            let width = q.side;
            // position of lo within its cell
            let t = lo - Dyadic::new(lo.floor_div_pow2(k), k);
            let gap = if t.is_zero() {
                Dyadic::ZERO
            } else {
                let right = cell - t - width;
                if right.signum() <= 0 {
                    Dyadic::ZERO
                } else {
                    t.min(right)
                }
            };
            best = Some(match best {
                None => gap,
                Some(b) => b.min(gap),
            });
        }
        best.unwrap_or(Dyadic::ZERO)
    }
}

/// A grid together with the per-level atom lists of a measure. All maps are
/// ordered so iteration (hence every ledger sum) is deterministic.
#[derive(Clone, Debug)]
pub struct GridIndex {
    pub grid: Arc<DyadicGrid>,
    pub measure: Arc<Measure>,
    /// level -> lattice index -> sorted atom ids
    levels: BTreeMap<i32, BTreeMap<Vec<i64>, Vec<u32>>>,
}

impl GridIndex {
    pub fn new(grid: Arc<DyadicGrid>, measure: Arc<Measure>) -> Self {
        let mut levels = BTreeMap::new();
        for k in grid.level_min()..=grid.level_max() {
            let mut cells: BTreeMap<Vec<i64>, Vec<u32>> = BTreeMap::new();
            for (i, a) in measure.atoms().iter().enumerate() {
                cells
                    .entry(grid.point_index(&a.pos, k))
                    .or_default()
                    .push(i as u32);
            }
            levels.insert(k, cells);
        }
        GridIndex { grid, measure, levels }
    }

    pub fn top(&self) -> &Cube {
        self.grid.top.as_ref().expect("index built over a measure")
    }

    /// Atom ids inside a cube of this grid (empty slice for empty cells).
    pub fn atoms_in(&self, cube: &Cube) -> &[u32] {
        debug_assert_eq!(cube.grid_id, self.grid.grid_id());
        self.levels
            .get(&cube.level)
            .and_then(|cells| cells.get(&cube.idx))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn mass(&self, cube: &Cube) -> Dyadic {
        self.measure.mass_of(self.atoms_in(cube))
    }

    /// Nonempty cells of a level, in index order.
    pub fn occupied(&self, level: i32) -> impl Iterator<Item = (Cube, &[u32])> + '_ {
        self.levels.get(&level).into_iter().flat_map(move |cells| {
            cells.iter().map(move |(idx, atoms)| {
                let cube = self.grid.cube_at(level, idx.clone()).expect("in range");
                (cube, atoms.as_slice())
            })
        })
    }

    /// All nonempty cubes, coarse to fine.
    pub fn occupied_cubes(&self) -> Vec<Cube> {
        let mut out = Vec::new();
        for k in (self.grid.level_min()..=self.grid.level_max()).rev() {
            for (cube, _) in self.occupied(k) {
                out.push(cube);
            }
        }
        out
    }
}
