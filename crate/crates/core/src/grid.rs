//! Dyadic geometry of the window `[0,1)^d`: cubes, dilations, discretized
//! balls and the boundary bands of balls relative to a dyadic level.
//!
//! Cells at level `l` are indexed row-major with the last axis fastest. All
//! cell sets returned here refer to the finest level `K` of the domain.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Balls used by averaging operators must span at least `2^RESOLUTION_GUARD`
/// cells per axis: `k <= K - RESOLUTION_GUARD`.
pub const RESOLUTION_GUARD: u32 = 2;
/// Per-axis subsampling used for ball coverage weights in `d = 2`.
pub const SUBSAMPLE: usize = 8;
/// Largest supported `d * K`.
pub const MAX_TOTAL_DEPTH: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// The window is a torus.
    Periodic,
    /// Fields are extended by zero outside the window.
    Interior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicDomain {
    dim: u32,
    depth: u32,
    mode: BoundaryMode,
}

impl DyadicDomain {
    pub fn new(dim: u32, depth: u32, mode: BoundaryMode) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid!("spatial dimension must be 1 or 2, got {dim}"));
        }
        if dim * depth > MAX_TOTAL_DEPTH {
            return Err(invalid!("d*K = {} exceeds {}", dim * depth, MAX_TOTAL_DEPTH));
        }
        Ok(Self { dim, depth, mode })
    }

    pub fn periodic(dim: u32, depth: u32) -> Result<Self> {
        Self::new(dim, depth, BoundaryMode::Periodic)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    /// Finest level `K`.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn side(&self, level: u32) -> usize {
        1usize << level
    }

    pub fn cell_count(&self, level: u32) -> usize {
        1usize << (level * self.dim)
    }

    pub fn cell_volume(&self, level: u32) -> f64 {
        (0.5f64).powi((level * self.dim) as i32)
    }

    /// Highest level at which ball averages are allowed.
    pub fn max_ball_level(&self) -> Option<u32> {
        self.depth.checked_sub(RESOLUTION_GUARD)
    }

    pub fn coords(&self, level: u32, index: usize) -> [usize; 2] {
        let side = self.side(level);
        match self.dim {
            1 => [index, 0],
            _ => [index / side, index % side],
        }
    }

    pub fn index(&self, level: u32, coords: [usize; 2]) -> usize {
        match self.dim {
            1 => coords[0],
            _ => coords[0] * self.side(level) + coords[1],
        }
    }

    /// Index of the level-`to` ancestor of cell `index` at level `from >= to`.
    pub fn ancestor(&self, from: u32, index: usize, to: u32) -> usize {
        debug_assert!(to <= from);
        let shift = from - to;
        let c = self.coords(from, index);
        self.index(to, [c[0] >> shift, c[1] >> shift])
    }

    /// Wraps or clips a signed coordinate at `level`.
    fn resolve_axis(&self, level: u32, coord: i64) -> Option<usize> {
        let side = self.side(level) as i64;
        match self.mode {
            BoundaryMode::Periodic => Some(coord.rem_euclid(side) as usize),
            BoundaryMode::Interior => (0..side).contains(&coord).then_some(coord as usize),
        }
    }

    /// Cell reached from `coords` by a signed offset, if any.
    pub fn offset_cell(&self, level: u32, coords: [usize; 2], offset: [i64; 2]) -> Option<usize> {
        let a = self.resolve_axis(level, coords[0] as i64 + offset[0])?;
        let b = if self.dim == 2 { self.resolve_axis(level, coords[1] as i64 + offset[1])? } else { 0 };
        Some(self.index(level, [a, b]))
    }

    /// Level-`K` cells contained in the level-`level` cell `index`.
    pub fn fine_cells(&self, level: u32, index: usize) -> Vec<usize> {
        let shift = self.depth - level;
        let span = 1usize << shift;
        let c = self.coords(level, index);
        let mut out = Vec::with_capacity(span.pow(self.dim));
        match self.dim {
            1 => out.extend((0..span).map(|i| (c[0] << shift) + i)),
            _ => {
                for i in 0..span {
                    for j in 0..span {
                        out.push(self.index(self.depth, [(c[0] << shift) + i, (c[1] << shift) + j]));
                    }
                }
            }
        }
        out
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level > self.depth {
            return Err(invalid!("level {level} outside 0..={}", self.depth));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    pub coords: [usize; 2],
}

impl DyadicCube {
    pub fn side_length(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }

    pub fn volume(&self, domain: &DyadicDomain) -> f64 {
        domain.cell_volume(self.level)
    }

    pub fn index(&self, domain: &DyadicDomain) -> usize {
        domain.index(self.level, self.coords)
    }

    pub fn center(&self, domain: &DyadicDomain) -> [f64; 2] {
        let l = self.side_length();
        let mut c = [0.0; 2];
        for (ca, &q) in c.iter_mut().zip(&self.coords).take(domain.dim() as usize) {
            *ca = (q as f64 + 0.5) * l;
        }
        c
    }

    pub fn fine_cells(&self, domain: &DyadicDomain) -> Vec<usize> {
        domain.fine_cells(self.level, self.index(domain))
    }

    pub fn contains_cell(&self, domain: &DyadicDomain, x: usize) -> bool {
        domain.ancestor(domain.depth(), x, self.level) == self.index(domain)
    }
}

/// `Q_{x,k}`: the level-`k` cube containing the finest cell `x`.
pub fn cube_of(domain: &DyadicDomain, x: usize, k: u32) -> Result<DyadicCube> {
    domain.check_level(k)?;
    if x >= domain.cell_count(domain.depth()) {
        return Err(invalid!("cell {x} out of range"));
    }
    let idx = domain.ancestor(domain.depth(), x, k);
    Ok(DyadicCube { level: k, coords: domain.coords(k, idx) })
}

/// Same-level cubes making up `iQ` (wrapped or clipped, deduplicated).
pub fn dilate_cubes(domain: &DyadicDomain, cube: &DyadicCube, i: u32) -> Result<Vec<DyadicCube>> {
    if i.is_multiple_of(2) {
        return Err(invalid!("dilation factor must be odd, got {i}"));
    }
    let r = (i / 2) as i64;
    let mut out = Vec::new();
    let second = if domain.dim() == 2 { -r..=r } else { 0..=0 };
    for a in -r..=r {
        for b in second.clone() {
            if let Some(idx) = domain.offset_cell(cube.level, cube.coords, [a, b]) {
                out.push(DyadicCube { level: cube.level, coords: domain.coords(cube.level, idx) });
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Finest cells covered by `iQ`.
pub fn dilate(domain: &DyadicDomain, cube: &DyadicCube, i: u32) -> Result<Vec<usize>> {
    let mut cells: Vec<usize> = dilate_cubes(domain, cube, i)?
        .iter()
        .flat_map(|q| q.fine_cells(domain))
        .collect();
    cells.sort_unstable();
    Ok(cells)
}

/// Coverage of the cell at integer offset `o` (cell units, relative to the ball
/// center shifted by `shift`) by a ball of radius `radius` cells.
fn coverage_1d(o: i64, shift: f64, radius: f64) -> f64 {
    let lo = o as f64 - 0.5 - shift;
    let hi = o as f64 + 0.5 - shift;
    (hi.min(radius) - lo.max(-radius)).max(0.0)
}

fn coverage_2d(o: [i64; 2], shift: [f64; 2], radius: f64) -> f64 {
    let r2 = radius * radius;
    let x0 = o[0] as f64 - 0.5 - shift[0];
    let y0 = o[1] as f64 - 0.5 - shift[1];
    let (x1, y1) = (x0 + 1.0, y0 + 1.0);
    let far_x = x0.abs().max(x1.abs());
    let far_y = y0.abs().max(y1.abs());
    if far_x * far_x + far_y * far_y < r2 {
        return 1.0;
    }
    let near_x = if x0 <= 0.0 && x1 >= 0.0 { 0.0 } else { x0.abs().min(x1.abs()) };
    let near_y = if y0 <= 0.0 && y1 >= 0.0 { 0.0 } else { y0.abs().min(y1.abs()) };
    if near_x * near_x + near_y * near_y >= r2 {
        return 0.0;
    }
    let s = SUBSAMPLE;
    let step = 1.0 / s as f64;
    let mut inside = 0usize;
    for i in 0..s {
        let px = x0 + (i as f64 + 0.5) * step;
        for j in 0..s {
            let py = y0 + (j as f64 + 0.5) * step;
            if px * px + py * py < r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (s * s) as f64
}

/// Translation-invariant discretization of the ball `B_k`, as weighted offsets
/// in finest-cell units.
#[derive(Clone, Debug)]
pub struct BallStencil {
    pub level: u32,
    pub offsets: Vec<([i64; 2], f64)>,
    /// Sum of all weights: `|B_k|` in cell units (exact for `d = 1`).
    pub total: f64,
}

impl BallStencil {
    /// Ball of radius `2^-k` centered at a cell center.
    pub fn new(domain: &DyadicDomain, k: u32) -> Result<Self> {
        Self::shifted(domain, k, [0.0, 0.0])
    }

    /// Ball centered at a cell center displaced by `shift` (cell units,
    /// components in `[-0.5, 0.5]`).
    pub fn shifted(domain: &DyadicDomain, k: u32, shift: [f64; 2]) -> Result<Self> {
        match domain.max_ball_level() {
            Some(max) if k <= max => {}
            _ => {
                return Err(Error::Resolution(alloc::format!(
                    "ball level {k} finer than K - {RESOLUTION_GUARD} at K = {}",
                    domain.depth()
                )))
            }
        }
        let radius = (1u64 << (domain.depth() - k)) as f64;
        let reach = radius.ceil() as i64 + 1;
        let mut offsets = Vec::new();
        match domain.dim() {
            1 => {
                for o in -reach..=reach {
                    let w = coverage_1d(o, shift[0], radius);
                    if w > 0.0 {
                        offsets.push(([o, 0], w));
                    }
                }
            }
            _ => {
                for a in -reach..=reach {
                    for b in -reach..=reach {
                        let w = coverage_2d([a, b], shift, radius);
                        if w > 0.0 {
                            offsets.push(([a, b], w));
                        }
                    }
                }
            }
        }
        let total = offsets.iter().map(|(_, w)| w).sum();
        Ok(Self { level: k, offsets, total })
    }

    /// Weighted finest cells covered by the ball around `x`; wrapped copies of
    /// the same cell are merged.
    pub fn cells_around(&self, domain: &DyadicDomain, x: usize) -> Vec<(usize, f64)> {
        let c = domain.coords(domain.depth(), x);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (o, w) in &self.offsets {
            if let Some(y) = domain.offset_cell(domain.depth(), c, *o) {
                *acc.entry(y).or_insert(0.0) += w;
            }
        }
        acc.into_iter().collect()
    }
}

/// Weighted discretization of `B_k` centered at the center of cell `x`.
pub fn ball_cells(domain: &DyadicDomain, x: usize, k: u32) -> Result<Vec<(usize, f64)>> {
    if x >= domain.cell_count(domain.depth()) {
        return Err(invalid!("cell {x} out of range"));
    }
    Ok(BallStencil::new(domain, k)?.cells_around(domain, x))
}

impl BallStencil {
    /// Offsets of the ball around a cell with coordinates `coords` that fall in
    /// level-`n` cubes only partially covered by the ball. Cubes are taken in
    /// the plane (before wrapping or clipping), so a cube counts as covered
    /// when each of its cells carries weight exactly 1.
    pub fn boundary_offsets(&self, domain: &DyadicDomain, coords: [usize; 2], n: u32) -> Vec<([i64; 2], f64)> {
        let shift = domain.depth() - n;
        let per_cube = 1usize << (shift * domain.dim());
        let mut cubes: BTreeMap<[i64; 2], Vec<([i64; 2], f64)>> = BTreeMap::new();
        for &(o, w) in &self.offsets {
            let p = [coords[0] as i64 + o[0], coords[1] as i64 + o[1]];
            let key = [p[0] >> shift, p[1] >> shift];
            cubes.entry(key).or_default().push((o, w));
        }
        let mut out = Vec::new();
        for (_, members) in cubes {
            let full = members.len() == per_cube && members.iter().all(|&(_, w)| w == 1.0);
            if !full {
                out.extend(members);
            }
        }
        out.sort_by_key(|a| a.0);
        out
    }
}

/// Boundary offsets for every residue class of a cell modulo the level-`n`
/// grid; the band of `x` depends only on the position of `x` inside its
/// level-`n` cube.
#[derive(Clone, Debug)]
pub struct BoundaryPlan {
    n: u32,
    span: usize,
    patterns: Vec<Vec<([i64; 2], f64)>>,
}

impl BoundaryPlan {
    pub fn new(domain: &DyadicDomain, stencil: &BallStencil, n: u32) -> Result<Self> {
        if n <= stencil.level {
            return Err(invalid!("boundary level n = {n} must exceed ball level k = {}", stencil.level));
        }
        domain.check_level(n)?;
        let span = 1usize << (domain.depth() - n);
        let second = if domain.dim() == 2 { span } else { 1 };
        let mut patterns = Vec::with_capacity(span * second);
        for a in 0..span {
            for b in 0..second {
                patterns.push(stencil.boundary_offsets(domain, [a, b], n));
            }
        }
        Ok(Self { n, span, patterns })
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    pub fn offsets_for(&self, domain: &DyadicDomain, x: usize) -> &[([i64; 2], f64)] {
        let c = domain.coords(domain.depth(), x);
        let idx = match domain.dim() {
            1 => c[0] % self.span,
            _ => (c[0] % self.span) * self.span + c[1] % self.span,
        };
        &self.patterns[idx]
    }

    /// Weighted cells of the band around `x`, wrapped copies merged.
    pub fn cells_for(&self, domain: &DyadicDomain, x: usize) -> Vec<(usize, f64)> {
        let c = domain.coords(domain.depth(), x);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (o, w) in self.offsets_for(domain, x) {
            if let Some(y) = domain.offset_cell(domain.depth(), c, *o) {
                *acc.entry(y).or_insert(0.0) += w;
            }
        }
        acc.into_iter().collect()
    }
}

/// `I(B_k + x, n)` as weighted finest cells.
pub fn boundary_cubes(domain: &DyadicDomain, x: usize, k: u32, n: u32) -> Result<Vec<(usize, f64)>> {
    if n <= k {
        return Err(invalid!("boundary level n = {n} must exceed ball level k = {k}"));
    }
    domain.check_level(n)?;
    if x >= domain.cell_count(domain.depth()) {
        return Err(invalid!("cell {x} out of range"));
    }
    let stencil = BallStencil::new(domain, k)?;
    Ok(BoundaryPlan::new(domain, &stencil, n)?.cells_for(domain, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d1(k: u32) -> DyadicDomain {
        DyadicDomain::periodic(1, k).unwrap()
    }

    #[test]
    fn cube_of_examples() {
        let dom = d1(3);
        let q = cube_of(&dom, 5, 1).unwrap();
        assert_eq!(q, DyadicCube { level: 1, coords: [1, 0] });
        let q = cube_of(&dom, 5, 3).unwrap();
        assert_eq!(q.coords[0], 5);
        assert!(cube_of(&dom, 5, 4).is_err());
    }

    #[test]
    fn cube_of_matches_interval_membership_in_2d() {
        let dom = DyadicDomain::periodic(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = rng.random_range(0..dom.cell_count(4));
            let q = cube_of(&dom, x, 2).unwrap();
            let c = dom.coords(4, x);
            // cell center must lie inside [coord*l, (coord+1)*l) on each axis
            for (&ca, &qa) in c.iter().zip(&q.coords) {
                let center = (ca as f64 + 0.5) / 16.0;
                let lo = qa as f64 * 0.25;
                assert!(center >= lo && center < lo + 0.25);
            }
            assert_eq!(q.coords, [c[0] >> 2, c[1] >> 2]);
        }
    }

    #[test]
    fn levels_partition_and_nest() {
        for dom in [d1(5), DyadicDomain::periodic(2, 3).unwrap()] {
            let k_max = dom.depth();
            for k in 0..=k_max {
                let mut seen = alloc::vec![0u32; dom.cell_count(k_max)];
                for q in 0..dom.cell_count(k) {
                    for x in dom.fine_cells(k, q) {
                        seen[x] += 1;
                    }
                }
                assert!(seen.iter().all(|&s| s == 1));
            }
            for x in 0..dom.cell_count(k_max) {
                for k in 1..=k_max {
                    let fine = cube_of(&dom, x, k).unwrap();
                    let coarse = cube_of(&dom, x, k - 1).unwrap();
                    assert!(coarse.fine_cells(&dom).contains(&x));
                    assert!(fine.fine_cells(&dom).iter().all(|y| coarse.contains_cell(&dom, *y)));
                }
            }
        }
    }

    #[test]
    fn dilation_examples() {
        let dom = d1(4);
        let q = DyadicCube { level: 2, coords: [1, 0] };
        assert_eq!(dilate(&dom, &q, 1).unwrap(), q.fine_cells(&dom));
        assert!(dilate(&dom, &q, 2).is_err());
        // 5Q for [0.25,0.5) is [-0.25, 1.0) which wraps onto the whole torus
        let five = dilate(&dom, &q, 5).unwrap();
        assert_eq!(five.len(), 16);
        let q3 = DyadicCube { level: 3, coords: [0, 0] };
        // [-0.25, 0.375) wrapped: measure 5/8
        let five = dilate(&dom, &q3, 5).unwrap();
        assert_eq!(five.len(), 10);
        assert!(five.contains(&15) && five.contains(&0) && five.contains(&5) && !five.contains(&6));
    }

    #[test]
    fn dilation_membership_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dom in [d1(6), DyadicDomain::periodic(2, 4).unwrap(), DyadicDomain::new(1, 6, BoundaryMode::Interior).unwrap()] {
            let cells = dom.cell_count(dom.depth());
            for _ in 0..200 {
                let x = rng.random_range(0..cells);
                let y = rng.random_range(0..cells);
                let k = rng.random_range(0..=dom.depth());
                let i = [1, 3, 5][rng.random_range(0..3)];
                let x_in = dilate(&dom, &cube_of(&dom, y, k).unwrap(), i).unwrap().contains(&x);
                let y_in = dilate(&dom, &cube_of(&dom, x, k).unwrap(), i).unwrap().contains(&y);
                assert_eq!(x_in, y_in);
            }
        }
    }

    #[test]
    fn one_dimensional_ball_weights_are_exact_and_symmetric() {
        let dom = d1(8);
        for k in 0..=6 {
            let cells = ball_cells(&dom, 128, k).unwrap();
            let total: f64 = cells.iter().map(|(_, w)| w).sum();
            assert_eq!(total, (1u64 << (8 - k + 1)) as f64);
            if k >= 2 {
                let map: BTreeMap<usize, f64> = cells.into_iter().collect();
                for d in 1..(1usize << (8 - k)) {
                    assert_eq!(map[&(128 + d)], map[&(128 - d)]);
                }
            }
        }
        assert!(matches!(ball_cells(&dom, 0, 7), Err(Error::Resolution(_))));
    }

    #[test]
    fn two_dimensional_ball_area_within_one_percent() {
        let dom = DyadicDomain::periodic(2, 6).unwrap();
        let k = 2;
        let st = BallStencil::new(&dom, k).unwrap();
        let area = st.total * dom.cell_volume(6);
        let exact = core::f64::consts::PI * (0.25f64).powi(2);
        assert!((area / exact - 1.0).abs() < 0.01, "{area} vs {exact}");
    }

    #[test]
    fn boundary_band_in_one_dimension() {
        let dom = d1(8);
        for k in 1..=6 {
            for n in (k + 1)..=8 {
                let band = boundary_cubes(&dom, 100, k, n).unwrap();
                let cubes: alloc::collections::BTreeSet<usize> =
                    band.iter().map(|(y, _)| dom.ancestor(8, *y, n)).collect();
                assert!(cubes.len() <= 2);
                let measure: f64 = band.iter().map(|(_, w)| w).sum::<f64>() * dom.cell_volume(8);
                assert!(measure <= 2.0 * (0.5f64).powi(n as i32) + 1e-15);
                if n == k + 1 {
                    assert!(measure <= 2.0 * (0.5f64).powi((k + 1) as i32));
                }
            }
        }
        assert!(boundary_cubes(&dom, 0, 3, 3).is_err());
    }

    #[test]
    fn boundary_band_scaling_is_bounded() {
        for dom in [d1(8), DyadicDomain::periodic(2, 6).unwrap()] {
            let d = dom.dim() as i32;
            let mut worst: f64 = 0.0;
            for k in 1..=dom.depth() - 2 {
                for n in (k + 1)..=dom.depth() {
                    for x in [0, 3, 17] {
                        let band = boundary_cubes(&dom, x, k, n).unwrap();
                        let m: f64 = band.iter().map(|(_, w)| w).sum::<f64>() * dom.cell_volume(dom.depth());
                        let scale = (0.5f64).powi(n as i32) * (0.5f64).powi(k as i32 * (d - 1));
                        worst = worst.max(m / scale);
                    }
                }
            }
            assert!(worst < 16.0, "{worst}");
        }
    }
}
